#include <algorithm>
#include <set>

#include <fmt/format.h>

#include "cardio/media.hpp"
#include "cardio/mirage.hpp"

namespace cardio::media {

using nlohmann::json;

namespace {

SequenceKind kind_from_string(std::string_view s) {
  if (s == "cine") return SequenceKind::Cine;
  if (s == "lge") return SequenceKind::Lge;
  if (s == "other") return SequenceKind::Other;
  throw std::invalid_argument(fmt::format("unknown sequence kind '{}'", s));
}

std::string_view to_string(SequenceKind k) {
  switch (k) {
    case SequenceKind::Cine: return "cine";
    case SequenceKind::Lge: return "lge";
    case SequenceKind::Other: return "other";
  }
  return "other";
}

Plane plane_from_string(std::string_view s) {
  if (s == "short-axis") return Plane::ShortAxis;
  if (s == "long-axis") return Plane::LongAxis;
  if (s == "4-chamber") return Plane::FourChamber;
  if (s == "other") return Plane::Other;
  throw std::invalid_argument(fmt::format("unknown plane '{}'", s));
}

std::string_view to_string(Plane p) {
  switch (p) {
    case Plane::ShortAxis: return "short-axis";
    case Plane::LongAxis: return "long-axis";
    case Plane::FourChamber: return "4-chamber";
    case Plane::Other: return "other";
  }
  return "other";
}

}  // namespace

StudyManifest parse_manifest(const json& j) {
  StudyManifest m;
  m.study_id = j.at("study_id").get<std::string>();
  m.modality = j.value("modality", Modality::Cmr);
  std::set<std::string> ids;
  for (const auto& s : j.at("series")) {
    Series series;
    series.series_id = s.at("series_id").get<std::string>();
    series.description = s.value("description", std::string{});
    series.kind = kind_from_string(s.value("sequence", std::string("other")));
    series.plane = plane_from_string(s.value("plane", std::string("other")));
    series.frames = s.value("frames", std::vector<std::string>{});
    if (!ids.insert(series.series_id).second) {
      throw std::invalid_argument(fmt::format("study {}: duplicate series id '{}'", m.study_id, series.series_id));
    }
    m.series.push_back(std::move(series));
  }
  return m;
}

StudyManifest read_manifest(const std::string& path) {
  try {
    return parse_manifest(json::parse(read_file(path)));
  } catch (const json::exception& e) {
    throw std::invalid_argument(fmt::format("manifest '{}': {}", path, e.what()));
  }
}

json to_json(const StudyManifest& m) {
  json series = json::array();
  for (const auto& s : m.series) {
    series.push_back({{"series_id", s.series_id},
                      {"description", s.description},
                      {"sequence", to_string(s.kind)},
                      {"plane", to_string(s.plane)},
                      {"frames", s.frames}});
  }
  return json{{"study_id", m.study_id}, {"modality", m.modality}, {"series", series}};
}

std::string_view to_string(Intent i) {
  switch (i) {
    case Intent::Function: return "function";
    case Intent::Fibrosis: return "fibrosis";
    case Intent::Volumetry: return "volumetry";
    case Intent::General: return "general";
  }
  return "general";
}

Intent intent_from_string(std::string_view text) {
  for (auto i : {Intent::Function, Intent::Fibrosis, Intent::Volumetry, Intent::General}) {
    if (to_string(i) == text) return i;
  }
  throw std::invalid_argument(fmt::format("unknown intent '{}'", text));
}

Intent infer_intent(std::string_view question) {
  const auto tokens = mirage::tokenize(question);
  auto any = [&](std::initializer_list<std::string_view> words) {
    return std::any_of(words.begin(), words.end(), [&](std::string_view w) { return tokens.count(std::string(w)); });
  };
  if (any({"fibrosis", "scar", "lge", "enhancement", "gadolinium"})) return Intent::Fibrosis;
  if (any({"volume", "volumes", "volumetry", "volumetric", "edv", "esv", "mass"})) return Intent::Volumetry;
  if (any({"function", "ejection", "ef", "contractility", "systolic", "diastolic", "motion"})) return Intent::Function;
  return Intent::General;
}

Selection select_sequences(const StudyManifest& manifest, Intent intent) {
  if (manifest.series.empty()) throw std::invalid_argument("select_sequences: manifest has no series");
  auto by_id = [](const Series& a, const Series& b) { return a.series_id < b.series_id; };
  Selection out;
  for (const auto& s : manifest.series) {
    bool keep = false;
    switch (intent) {
      case Intent::Function: keep = s.kind == SequenceKind::Cine; break;
      case Intent::Fibrosis: keep = s.kind == SequenceKind::Lge; break;
      case Intent::Volumetry: keep = s.kind == SequenceKind::Cine && s.plane == Plane::ShortAxis; break;
      case Intent::General: keep = true; break;
    }
    if (keep) out.series.push_back(s);
  }
  if (intent == Intent::General) {
    std::stable_sort(out.series.begin(), out.series.end(), [&](const Series& a, const Series& b) {
      const bool ca = a.kind == SequenceKind::Cine;
      const bool cb = b.kind == SequenceKind::Cine;
      if (ca != cb) return ca;
      return by_id(a, b);
    });
  } else {
    std::stable_sort(out.series.begin(), out.series.end(), by_id);
  }
  if (out.series.empty()) {
    static constexpr std::string_view need[] = {"cine", "LGE", "short-axis cine", "any"};
    out.advisory = fmt::format("study {} has no {} series for {} assessment", manifest.study_id,
                               need[static_cast<int>(intent)], to_string(intent));
  }
  return out;
}

}  // namespace cardio::media
