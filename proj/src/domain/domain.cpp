#include "cardio/domain.hpp"

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

namespace cardio {

using nlohmann::json;

std::string_view to_string(Modality m) {
  switch (m) {
    case Modality::Ecg: return "ecg";
    case Modality::Echo: return "echo";
    case Modality::Cmr: return "cmr";
  }
  return "ecg";
}

std::string_view display_name(Modality m) {
  switch (m) {
    case Modality::Ecg: return "ECG";
    case Modality::Echo: return "Echo";
    case Modality::Cmr: return "CMR";
  }
  return "ECG";
}

std::optional<Modality> parse_modality(std::string_view text) {
  std::string lower(text);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (lower == "ecg") return Modality::Ecg;
  if (lower == "echo") return Modality::Echo;
  if (lower == "cmr") return Modality::Cmr;
  return std::nullopt;
}

Modality modality_from_string(std::string_view text) {
  if (auto m = parse_modality(text)) return *m;
  throw std::invalid_argument(fmt::format("unknown modality '{}'", text));
}

std::string_view to_string(MediaKind k) {
  switch (k) {
    case MediaKind::Image: return "image";
    case MediaKind::Video: return "video";
    case MediaKind::SignalXml: return "signal-xml";
    case MediaKind::StudyManifest: return "study-manifest";
  }
  return "image";
}

MediaKind media_kind_from_string(std::string_view text) {
  if (text == "image") return MediaKind::Image;
  if (text == "video") return MediaKind::Video;
  if (text == "signal-xml") return MediaKind::SignalXml;
  if (text == "study-manifest") return MediaKind::StudyManifest;
  throw std::invalid_argument(fmt::format("unknown media kind '{}'", text));
}

std::string_view to_string(ProbeRole r) {
  switch (r) {
    case ProbeRole::Rephrase1: return "rephrase-1";
    case ProbeRole::Rephrase2: return "rephrase-2";
    case ProbeRole::Rephrase3: return "rephrase-3";
    case ProbeRole::ImageAbsent: return "image-absent";
  }
  return "rephrase-1";
}

ProbeRole probe_role_from_string(std::string_view text) {
  for (auto r : kAllProbeRoles) {
    if (to_string(r) == text) return r;
  }
  throw std::invalid_argument(fmt::format("unknown probe role '{}'", text));
}

const AnswerOption* BenchmarkItem::option(char label) const {
  auto it = std::find_if(options.begin(), options.end(), [&](const AnswerOption& o) { return o.label == label; });
  return it == options.end() ? nullptr : &*it;
}

std::string modality_group(const BenchmarkItem& item) {
  if (item.modality_set.size() == 1) return std::string(to_string(*item.modality_set.begin()));
  return "multimodal";
}

LikertScore LikertScore::make(int value, std::string explanation) {
  if (value < 1 || value > 5) throw std::invalid_argument(fmt::format("Likert score {} outside 1..5", value));
  return LikertScore{value, std::move(explanation)};
}

std::vector<Violation> validate_item(const BenchmarkItem& item) {
  std::vector<Violation> out;
  auto add = [&](std::string field, std::string msg) { out.push_back({std::move(field), std::move(msg)}); };

  if (item.id.empty()) add("id", "id must be non-empty");
  if (item.modality_set.empty() || item.modality_set.size() > 3) add("modality_set", "modality_set must hold 1-3 modalities");
  if (item.question.empty()) add("question", "question must be non-empty");

  if (item.format == AnswerFormat::Mcq) {
    if (item.options.size() < 4 || item.options.size() > 5) {
      add("options", fmt::format("mcq requires 4-5 options, found {}", item.options.size()));
    }
    for (std::size_t i = 0; i < item.options.size(); ++i) {
      const char expected = static_cast<char>('A' + i);
      if (item.options[i].label != expected) {
        add("options", fmt::format("labels must be consecutive from A; position {} has '{}'", i,
                                   std::string(1, item.options[i].label)));
        break;
      }
    }
    for (std::size_t i = 0; i < item.options.size(); ++i) {
      if (item.options[i].text.empty()) add("options", fmt::format("option {} has empty text", i));
      for (std::size_t k = i + 1; k < item.options.size(); ++k) {
        if (item.options[i].text == item.options[k].text && !item.options[i].text.empty()) {
          add("options", fmt::format("options {} and {} share the same text", i, k));
        }
      }
    }
    if (!item.correct_label) {
      add("correct_label", "mcq requires a correct_label");
    } else if (*item.correct_label < 'A' || *item.correct_label > 'E') {
      add("correct_label", "label out of range");
    } else {
      const auto count = std::count_if(item.options.begin(), item.options.end(),
                                       [&](const AnswerOption& o) { return o.label == *item.correct_label; });
      if (count != 1) add("correct_label", "correct_label must match exactly one option");
    }
    if (item.reference_answer) add("reference_answer", "reference_answer forbidden for mcq format");
  } else {
    if (!item.options.empty()) add("options", "options forbidden for open format");
    if (item.correct_label) add("correct_label", "correct_label forbidden for open format");
    if (!item.reference_answer || item.reference_answer->empty()) {
      add("reference_answer", "open format requires a reference_answer");
    }
  }

  if (item.rephrasings.size() != 3) {
    add("rephrasings", fmt::format("exactly 3 rephrasings required, found {}", item.rephrasings.size()));
  }
  for (std::size_t i = 0; i < item.rephrasings.size(); ++i) {
    for (std::size_t k = i + 1; k < item.rephrasings.size(); ++k) {
      if (item.rephrasings[i] == item.rephrasings[k]) {
        add("rephrasings", fmt::format("rephrasings {} and {} are identical", i, k));
      }
    }
  }

  for (std::size_t i = 0; i < item.media.size(); ++i) {
    const auto& m = item.media[i];
    if (m.uri.empty()) add("media", fmt::format("media {} has empty uri", i));
    if (m.kind == MediaKind::SignalXml && m.modality != Modality::Ecg) {
      add("media", fmt::format("media {}: signal-xml is only valid for ecg", i));
    }
    if (!item.modality_set.count(m.modality)) {
      add("media", fmt::format("media {} modality not in modality_set", i));
    }
  }
  return out;
}

// ---- JSON ----

void to_json(json& j, Modality m) { j = std::string(to_string(m)); }
void from_json(const json& j, Modality& m) { m = modality_from_string(j.get<std::string>()); }

void to_json(json& j, const MediaRef& m) {
  j = json{{"modality", m.modality}, {"uri", m.uri}, {"kind", std::string(to_string(m.kind))}};
}

void from_json(const json& j, MediaRef& m) {
  m.modality = j.at("modality").get<Modality>();
  m.uri = j.at("uri").get<std::string>();
  m.kind = media_kind_from_string(j.at("kind").get<std::string>());
}

namespace {

char label_from_json(const json& j) {
  const auto s = j.get<std::string>();
  if (s.size() != 1) throw std::invalid_argument(fmt::format("label '{}' must be a single letter", s));
  return s[0];
}

}  // namespace

void to_json(json& j, const BenchmarkItem& item) {
  j = json::object();
  j["id"] = item.id;
  j["modality_set"] = json::array();
  for (auto m : item.modality_set) j["modality_set"].push_back(m);
  j["question"] = item.question;
  j["format"] = item.format == AnswerFormat::Mcq ? "mcq" : "open";
  if (!item.options.empty()) {
    j["options"] = json::array();
    for (const auto& o : item.options) j["options"].push_back({{"label", std::string(1, o.label)}, {"text", o.text}});
  }
  if (item.correct_label) j["correct_label"] = std::string(1, *item.correct_label);
  if (item.reference_answer) j["reference_answer"] = *item.reference_answer;
  j["category"] = item.category;
  j["media"] = item.media;
  j["rephrasings"] = item.rephrasings;
}

void from_json(const json& j, BenchmarkItem& item) {
  item = BenchmarkItem{};
  item.id = j.at("id").get<std::string>();
  for (const auto& m : j.at("modality_set")) item.modality_set.insert(m.get<Modality>());
  item.question = j.at("question").get<std::string>();
  const auto format = j.at("format").get<std::string>();
  if (format == "mcq") {
    item.format = AnswerFormat::Mcq;
  } else if (format == "open") {
    item.format = AnswerFormat::Open;
  } else {
    throw std::invalid_argument(fmt::format("unknown format '{}'", format));
  }
  if (j.contains("options") && !j["options"].is_null()) {
    for (const auto& o : j["options"]) {
      item.options.push_back({label_from_json(o.at("label")), o.at("text").get<std::string>()});
    }
  }
  if (j.contains("correct_label") && !j["correct_label"].is_null()) item.correct_label = label_from_json(j["correct_label"]);
  if (j.contains("reference_answer") && !j["reference_answer"].is_null()) {
    item.reference_answer = j["reference_answer"].get<std::string>();
  }
  item.category = j.value("category", std::string{});
  if (j.contains("media")) item.media = j["media"].get<std::vector<MediaRef>>();
  if (j.contains("rephrasings")) item.rephrasings = j["rephrasings"].get<std::vector<std::string>>();
}

void to_json(json& j, const ExpertResponse& r) {
  j = json{{"text", r.text},
           {"modality", r.modality},
           {"probe_role", std::string(to_string(r.probe_role))},
           {"latency_ms", r.latency_ms},
           {"backend_id", r.backend_id},
           {"attempts", r.attempts}};
}

void from_json(const json& j, ExpertResponse& r) {
  r.text = j.at("text").get<std::string>();
  r.modality = j.at("modality").get<Modality>();
  r.probe_role = probe_role_from_string(j.at("probe_role").get<std::string>());
  r.latency_ms = j.value("latency_ms", std::uint64_t{0});
  r.backend_id = j.value("backend_id", std::string{});
  r.attempts = j.value("attempts", 1);
}

void to_json(json& j, const LikertScore& s) { j = json{{"value", s.value}, {"explanation", s.explanation}}; }

void from_json(const json& j, LikertScore& s) {
  s = LikertScore::make(j.at("value").get<int>(), j.value("explanation", std::string{}));
}

// ---- files ----

JsonLinesError::JsonLinesError(std::string path, std::size_t line, const std::string& what)
    : std::runtime_error(fmt::format("{}:{}: {}", path, line, what)), path_(std::move(path)), line_(line) {}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(fmt::format("cannot open '{}'", path));
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<json> read_json_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(fmt::format("cannot open '{}'", path));
  std::vector<json> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(json::parse(line));
    } catch (const json::exception& e) {
      throw JsonLinesError(path, n, e.what());
    }
  }
  return out;
}

std::vector<BenchmarkItem> read_benchmark(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(fmt::format("cannot open '{}'", path));
  std::vector<BenchmarkItem> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      auto item = json::parse(line).get<BenchmarkItem>();
      const auto violations = validate_item(item);
      if (!violations.empty()) {
        throw std::invalid_argument(fmt::format("item '{}': {}: {}", item.id, violations[0].field, violations[0].message));
      }
      out.push_back(std::move(item));
    } catch (const std::exception& e) {
      throw JsonLinesError(path, n, e.what());
    }
  }
  return out;
}

void write_benchmark(const std::string& path, const std::vector<BenchmarkItem>& items) {
  std::string buf;
  for (const auto& item : items) {
    buf += json(item).dump();
    buf += '\n';
  }
  write_file_atomic(path, buf);
}

void write_file_atomic(const std::string& path, std::string_view contents) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  static std::atomic<unsigned long> counter{0};
  fs::path tmp = target;
  tmp += fmt::format(".tmp{}", counter.fetch_add(1));
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error(fmt::format("cannot write '{}'", tmp.string()));
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw std::runtime_error(fmt::format("short write to '{}'", tmp.string()));
  }
  fs::rename(tmp, target);
}

}  // namespace cardio
