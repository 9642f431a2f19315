#include "cardio/benchgen.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

namespace cardio::benchgen {

using nlohmann::json;

namespace {

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

std::string value_text(const FieldValue& v) {
  if (const auto* s = std::get_if<std::string>(&v)) return *s;
  const double d = std::get<double>(v);
  return d == std::floor(d) && std::abs(d) < 1e15 ? fmt::format("{}", static_cast<long long>(d)) : fmt::format("{}", d);
}

// Fisher-Yates with a portable index draw: floor(u * (i + 1)), u in [0, 1).
template <class T>
void portable_shuffle(std::vector<T>& v, std::mt19937_64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    const auto j = static_cast<std::size_t>(u * static_cast<double>(i));
    std::swap(v[i - 1], v[j]);
  }
}

}  // namespace

QuestionTemplate QuestionTemplate::from_json(const json& j) {
  QuestionTemplate t;
  t.id = j.at("id").get<std::string>();
  t.modality = j.at("modality").get<Modality>();
  t.category = j.value("category", std::string("general"));
  const auto fmt_text = j.value("format", std::string("mcq"));
  if (fmt_text == "mcq") {
    t.format = AnswerFormat::Mcq;
  } else if (fmt_text == "open") {
    t.format = AnswerFormat::Open;
  } else {
    throw std::invalid_argument(fmt::format("template {}: unknown format '{}'", t.id, fmt_text));
  }
  t.question = j.at("question").get<std::string>();
  t.answer_slot = j.at("answer_slot").get<std::string>();
  t.subject = j.value("subject", std::string{});
  for (const auto& b : j.at("bank")) {
    if (b.is_string()) {
      t.bank.push_back({b.get<std::string>(), std::nullopt, std::nullopt});
    } else {
      BankEntry e{b.at("text").get<std::string>(), std::nullopt, std::nullopt};
      if (b.contains("min")) e.min = b["min"].get<double>();
      if (b.contains("max")) e.max = b["max"].get<double>();
      t.bank.push_back(std::move(e));
    }
  }
  if (t.bank.size() < 4) throw std::invalid_argument(fmt::format("template {}: option bank needs at least 4 entries", t.id));
  std::set<std::string> seen;
  for (const auto& e : t.bank) {
    if (!seen.insert(lower(e.text)).second) {
      throw std::invalid_argument(fmt::format("template {}: duplicate bank entry '{}'", t.id, e.text));
    }
  }
  return t;
}

ReportRecord ReportRecord::from_json(const json& j) {
  ReportRecord r;
  r.study_id = j.at("study_id").get<std::string>();
  r.modality = j.at("modality").get<Modality>();
  r.narrative = j.value("narrative", std::string{});
  const auto findings = j.value("findings", json::object());
  for (const auto& [k, v] : findings.items()) {
    if (v.is_number()) {
      r.findings[k] = v.get<double>();
    } else if (v.is_string()) {
      r.findings[k] = v.get<std::string>();
    } else {
      throw std::invalid_argument(fmt::format("record {}: field '{}' must be text or a number", r.study_id, k));
    }
  }
  r.media = j.value("media", std::vector<MediaRef>{});
  return r;
}

std::vector<QuestionTemplate> load_templates(const std::string& path) {
  try {
    const auto j = json::parse(read_file(path));
    std::vector<QuestionTemplate> out;
    for (const auto& t : j.is_array() ? j : j.at("templates")) out.push_back(QuestionTemplate::from_json(t));
    return out;
  } catch (const json::exception& e) {
    throw std::invalid_argument(fmt::format("templates '{}': {}", path, e.what()));
  }
}

std::vector<ReportRecord> load_records(const std::string& path) {
  try {
    const auto j = json::parse(read_file(path));
    std::vector<ReportRecord> out;
    for (const auto& r : j.is_array() ? j : j.at("records")) out.push_back(ReportRecord::from_json(r));
    return out;
  } catch (const json::exception& e) {
    throw std::invalid_argument(fmt::format("records '{}': {}", path, e.what()));
  }
}

std::uint64_t item_seed(std::uint64_t seed, std::string_view item_id) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : item_id) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h ^ (seed * 0x9e3779b97f4a7c15ULL);
}

BenchmarkItem instantiate(const QuestionTemplate& tmpl, const ReportRecord& record, std::uint64_t seed,
                          const mirage::RephraseTemplates& rephrase) {
  if (tmpl.modality != record.modality) {
    throw GenerationError(fmt::format("template {} is {} but record {} is {}", tmpl.id, to_string(tmpl.modality),
                                      record.study_id, to_string(record.modality)));
  }
  auto it = record.findings.find(tmpl.answer_slot);
  if (it == record.findings.end()) {
    throw GenerationError(fmt::format("record {}: unresolved slot '{}'", record.study_id, tmpl.answer_slot));
  }

  std::optional<std::size_t> answer;
  for (std::size_t i = 0; i < tmpl.bank.size() && !answer; ++i) {
    const auto& e = tmpl.bank[i];
    if (const auto* d = std::get_if<double>(&it->second)) {
      if ((e.min || e.max) && (!e.min || *d >= *e.min) && (!e.max || *d < *e.max)) answer = i;
    } else if (lower(e.text) == lower(std::get<std::string>(it->second))) {
      answer = i;
    }
  }
  if (!answer) {
    throw GenerationError(fmt::format("record {}: slot '{}' value '{}' matches no option of template {}",
                                      record.study_id, tmpl.answer_slot, value_text(it->second), tmpl.id));
  }

  std::string question = tmpl.question;
  for (std::size_t open = question.find('{'); open != std::string::npos; open = question.find('{', open)) {
    const auto close = question.find('}', open);
    if (close == std::string::npos) break;
    const auto slot = question.substr(open + 1, close - open - 1);
    auto f = record.findings.find(slot);
    if (f == record.findings.end()) {
      throw GenerationError(fmt::format("record {}: unresolved slot '{}'", record.study_id, slot));
    }
    const auto text = value_text(f->second);
    question.replace(open, close - open + 1, text);
    open += text.size();
  }

  BenchmarkItem item;
  item.id = fmt::format("{}:{}", tmpl.id, record.study_id);
  item.modality_set = {tmpl.modality};
  item.question = question;
  item.format = tmpl.format;
  item.category = tmpl.category;
  item.media = record.media;
  const auto r = mirage::rephrase(question, tmpl.subject, tmpl.modality, rephrase);
  item.rephrasings.assign(r.begin(), r.end());

  if (tmpl.format == AnswerFormat::Open) {
    item.reference_answer = tmpl.bank[*answer].text;
  } else {
    // Correct entry plus up to four distractors in bank order.
    std::vector<std::size_t> chosen{*answer};
    for (std::size_t i = 0; i < tmpl.bank.size() && chosen.size() < 5; ++i) {
      if (i != *answer) chosen.push_back(i);
    }
    std::mt19937_64 rng(item_seed(seed, item.id));
    portable_shuffle(chosen, rng);
    for (std::size_t k = 0; k < chosen.size(); ++k) {
      const char label = static_cast<char>('A' + k);
      item.options.push_back({label, tmpl.bank[chosen[k]].text});
      if (chosen[k] == *answer) item.correct_label = label;
    }
  }

  const auto violations = validate_item(item);
  if (!violations.empty()) {
    throw GenerationError(fmt::format("item {}: {}: {}", item.id, violations[0].field, violations[0].message));
  }
  return item;
}

BenchmarkItem swap_none_option(BenchmarkItem item, char which) {
  if (item.format != AnswerFormat::Mcq) throw std::invalid_argument("swap_none_option: item is not multiple choice");
  auto it = std::find_if(item.options.begin(), item.options.end(), [&](const AnswerOption& o) { return o.label == which; });
  if (it == item.options.end()) {
    throw std::invalid_argument(fmt::format("swap_none_option: item {} has no option {}", item.id, which));
  }
  it->text = std::string(kNoneOfTheOtherOptions);
  return item;
}

Dataset generate_dataset(const std::vector<QuestionTemplate>& templates, const std::vector<ReportRecord>& records,
                         const GenerationConfig& cfg) {
  if (!(cfg.none_fraction >= 0.0 && cfg.none_fraction <= 1.0)) {
    throw std::invalid_argument("none_fraction must be in [0, 1]");
  }
  Dataset out;
  for (const auto& t : templates) {
    for (const auto& r : records) {
      if (t.modality != r.modality) continue;
      try {
        out.items.push_back(instantiate(t, r, cfg.seed));
      } catch (const GenerationError& e) {
        ++out.stats.skipped;
        spdlog::debug("skip {}:{}: {}", t.id, r.study_id, e.what());
      }
    }
  }
  if (out.items.empty()) throw GenerationError("no items generated: no template slot resolved against any record");
  std::sort(out.items.begin(), out.items.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  for (std::size_t i = 1; i < out.items.size(); ++i) {
    if (out.items[i].id == out.items[i - 1].id) {
      throw GenerationError(fmt::format("duplicate item id {}", out.items[i].id));
    }
  }

  std::vector<std::size_t> mcq;
  for (std::size_t i = 0; i < out.items.size(); ++i) {
    if (out.items[i].format == AnswerFormat::Mcq) mcq.push_back(i);
  }
  const auto n_none = static_cast<std::size_t>(std::llround(cfg.none_fraction * static_cast<double>(mcq.size())));
  std::mt19937_64 rng(item_seed(cfg.seed, "none-option"));
  portable_shuffle(mcq, rng);
  for (std::size_t k = 0; k < n_none; ++k) {
    auto& item = out.items[mcq[k]];
    std::mt19937_64 pick(item_seed(cfg.seed ^ 0x6e6f6e65ULL, item.id));
    const double u = static_cast<double>(pick() >> 11) * 0x1.0p-53;
    const auto idx = static_cast<std::size_t>(u * static_cast<double>(item.options.size()));
    const char label = item.options[idx].label;
    item = swap_none_option(std::move(item), label);
  }

  auto& s = out.stats;
  s.total = out.items.size();
  s.none_option = n_none;
  for (const auto& item : out.items) {
    (item.format == AnswerFormat::Mcq ? s.mcq : s.open) += 1;
    ++s.per_category[item.category];
    ++s.per_modality[modality_group(item)];
  }
  return out;
}

json to_json(const DatasetStats& s) {
  return json{{"total", s.total},     {"mcq", s.mcq},
              {"open", s.open},       {"none_option", s.none_option},
              {"skipped", s.skipped}, {"per_category", s.per_category},
              {"per_modality", s.per_modality}};
}

}  // namespace cardio::benchgen
