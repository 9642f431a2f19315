#include <algorithm>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "cardio/orchestrator.hpp"

namespace cardio::orchestrator {

using nlohmann::json;

RoutingTable RoutingTable::from_json(const json& j) {
  RoutingTable t;
  for (const auto& c : j.value("conditions", json::array())) {
    ConditionRule rule;
    rule.name = c.value("name", std::string{});
    rule.keywords = c.at("keywords").get<std::vector<std::string>>();
    for (const auto& r : c.at("routines")) {
      rule.routines.push_back(
          {r.at("modality").get<Modality>(), r.at("question").get<std::string>(), r.value("subject", std::string{})});
    }
    t.conditions.push_back(std::move(rule));
  }
  for (const auto& term : j.value("terms", json::array())) {
    const auto modality = term.at("modality").get<Modality>();
    const auto subject = term.value("subject", std::string{});
    for (const auto& kw : term.at("keywords")) {
      t.terms.push_back({kw.get<std::string>(), modality, subject});
    }
  }
  return t;
}

RoutingTable RoutingTable::load(const std::string& path) {
  try {
    return from_json(json::parse(read_file(path)));
  } catch (const json::exception& e) {
    throw std::invalid_argument(fmt::format("routing table '{}': {}", path, e.what()));
  }
}

bool contains_phrase(std::string_view text, std::string_view keyword) {
  const auto hay = mirage::token_list(text);
  const auto needle = mirage::token_list(keyword);
  if (needle.empty() || needle.size() > hay.size()) return false;
  return std::search(hay.begin(), hay.end(), needle.begin(), needle.end()) != hay.end();
}

namespace {

/// Matched sub-queries per modality, ignoring availability.
std::map<Modality, SubQuery> route(std::string_view question, const RoutingTable& table,
                                   std::string_view parent_id) {
  std::map<Modality, SubQuery> chosen;
  for (const auto& rule : table.conditions) {
    const bool hit = std::any_of(rule.keywords.begin(), rule.keywords.end(),
                                 [&](const std::string& kw) { return contains_phrase(question, kw); });
    if (!hit) continue;
    for (const auto& r : rule.routines) {
      chosen.try_emplace(r.modality, SubQuery{r.modality, r.question, r.subject, std::string(parent_id)});
    }
  }
  for (const auto& term : table.terms) {
    if (chosen.count(term.modality) || !contains_phrase(question, term.keyword)) continue;
    chosen.emplace(term.modality, SubQuery{term.modality, std::string(question),
                                           term.subject.empty() ? term.keyword : term.subject,
                                           std::string(parent_id)});
  }
  return chosen;
}

}  // namespace

std::set<Modality> routed_modalities(std::string_view question, const RoutingTable& table) {
  std::set<Modality> out;
  for (const auto& [m, _] : route(question, table, {})) out.insert(m);
  return out;
}

std::vector<SubQuery> decompose(std::string_view question, const std::set<Modality>& available,
                                const RoutingTable& table, std::string_view parent_id) {
  if (available.empty()) throw std::invalid_argument("decompose: no available modality");
  std::vector<SubQuery> out;
  for (auto& [m, sq] : route(question, table, parent_id)) {
    if (available.count(m)) out.push_back(std::move(sq));
  }
  if (out.empty()) {
    for (auto m : kAllModalities) {
      if (available.count(m)) out.push_back(SubQuery{m, std::string(question), "", std::string(parent_id)});
    }
  }
  return out;
}

std::vector<SubQuery> decompose_remote(gateway::ExpertBackend& backend, std::string_view question,
                                       const std::set<Modality>& available, const RoutingTable& table,
                                       std::string_view parent_id) {
  std::string names;
  for (auto m : available) names += fmt::format("{}{}", names.empty() ? "" : ", ", to_string(m));
  const auto prompt = fmt::format(
      "Decompose the clinical question into modality-specific sub-questions for the experts available ({}). "
      "Reply with JSON only: {{\"subqueries\": [{{\"modality\": \"ecg|echo|cmr\", \"question\": \"...\", "
      "\"subject\": \"...\"}}]}}.\nQuestion: {}",
      names, question);
  try {
    const auto reply = backend.complete(prompt);
    const auto open = reply.find('{');
    const auto close = reply.rfind('}');
    if (open == std::string::npos || close == std::string::npos || close < open) {
      throw std::invalid_argument("no JSON object in reply");
    }
    const auto j = json::parse(reply.substr(open, close - open + 1));
    std::map<Modality, SubQuery> chosen;
    for (const auto& s : j.at("subqueries")) {
      const auto m = s.at("modality").get<Modality>();
      auto q = s.at("question").get<std::string>();
      if (!available.count(m) || q.empty()) continue;
      chosen.try_emplace(m, SubQuery{m, std::move(q), s.value("subject", std::string{}), std::string(parent_id)});
    }
    if (!chosen.empty()) {
      std::vector<SubQuery> out;
      for (auto& [_, sq] : chosen) out.push_back(std::move(sq));
      return out;
    }
    spdlog::info("remote decomposer returned no usable sub-queries; using routing rules");
  } catch (const std::exception& e) {
    spdlog::info("remote decomposer failed ({}); using routing rules", e.what());
  }
  return decompose(question, available, table, parent_id);
}

}  // namespace cardio::orchestrator
