#include <algorithm>
#include <future>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "cardio/orchestrator.hpp"

namespace cardio::orchestrator {

using nlohmann::json;

std::map<Modality, double> confidence_weights(const std::map<Modality, double>& confidences) {
  std::map<Modality, double> w;
  if (confidences.empty()) return w;
  double total = 0.0;
  for (const auto& [_, c] : confidences) total += c;
  for (const auto& [m, c] : confidences) {
    w[m] = total > 0.0 ? c / total : 1.0 / static_cast<double>(confidences.size());
  }
  return w;
}

Orchestrator::Orchestrator(OrchestratorConfig config, RoutingTable routing, PolarityLexicon lexicon)
    : config_(std::move(config)), routing_(std::move(routing)), lexicon_(std::move(lexicon)) {}

namespace {

struct ProbeOutcome {
  std::optional<ExpertResponse> response;
  std::optional<gateway::GatewayError> error;
};

struct SubQueryRun {
  SubQuery sub;
  mirage::ProbeSet probes;
  std::array<std::future<ProbeOutcome>, 4> futures;
  std::array<ProbeOutcome, 4> outcomes;
};

class LiveTrace {
 public:
  explicit LiveTrace(const TraceSink& sink) : sink_(sink) {}
  void emit(TraceEvent e) {
    if (!sink_) return;
    std::lock_guard lock(mutex_);
    e.seq = next_++;
    sink_(e);
  }

 private:
  const TraceSink& sink_;
  std::mutex mutex_;
  std::uint64_t next_ = 0;
};

const ExpertQuery& probe_query(const mirage::ProbeSet& set, std::size_t i) {
  return i < 3 ? set.rephrasings[i] : set.counterfactual;
}

}  // namespace

OrchestrationResult Orchestrator::orchestrate(std::string_view question, const MediaMap& media,
                                              const BackendMap& backends, const TraceSink& sink,
                                              const std::map<Modality, std::string>& context,
                                              std::optional<Modality> focus) const {
  if (question.empty()) throw OrchestrationError("orchestrate: empty question");

  OrchestrationResult result;
  LiveTrace live(sink);
  std::vector<TraceEvent> trace;
  auto record = [&](TraceEvent e) {
    e.seq = trace.size();
    trace.push_back(e);
  };

  std::set<Modality> available;
  for (auto m : kAllModalities) {
    auto mi = media.find(m);
    auto bi = backends.find(m);
    if (mi != media.end() && !mi->second.empty() && bi != backends.end() && bi->second) available.insert(m);
  }
  auto routed = routed_modalities(question, routing_);
  if (focus) {
    if (!available.count(*focus)) {
      throw OrchestrationError(fmt::format("orchestrate: focus {} has no media or no expert", display_name(*focus)));
    }
    available = {*focus};
    routed = routed.count(*focus) ? std::set<Modality>{*focus} : std::set<Modality>{};
  }
  for (auto m : routed) {
    if (available.count(m)) continue;
    const bool has_backend = backends.count(m) && backends.at(m);
    result.notes.push_back(fmt::format("{} was requested but {}; it was excluded from this assessment.",
                                       display_name(m), has_backend ? "no media is attached" : "no expert is configured"));
    TraceEvent e;
    e.kind = "excluded";
    e.modality = m;
    e.text = result.notes.back();
    record(e);
    live.emit(e);
  }
  if (available.empty()) throw OrchestrationError("orchestrate: no modality has both media and an expert backend");

  const bool routed_any = [&] {
    for (auto m : routed) {
      if (available.count(m)) return true;
    }
    return false;
  }();

  std::vector<SubQuery> subs;
  if (config_.remote_decomposer && config_.decomposer) {
    subs = decompose_remote(*config_.decomposer, question, available, routing_);
  } else {
    subs = decompose(question, available, routing_);
  }
  if (!routed_any) {
    for (auto& s : subs) {
      auto it = context.find(s.modality);
      if (it != context.end() && !it->second.empty() && s.question == question) {
        s.question = fmt::format("{} (Prior {} finding: {})", question, display_name(s.modality), it->second);
      }
    }
  }
  {
    TraceEvent e;
    e.kind = "decompose";
    e.question = std::string(question);
    json subs_json = json::array();
    for (const auto& s : subs) subs_json.push_back({{"modality", s.modality}, {"question", s.question}, {"subject", s.subject}});
    e.scores = json{{"sub_queries", subs_json}};
    record(e);
    live.emit(e);
  }

  // Launch every probe of every sub-query concurrently.
  std::vector<std::unique_ptr<SubQueryRun>> runs;
  for (const auto& s : subs) {
    auto run = std::make_unique<SubQueryRun>();
    run->sub = s;
    run->probes = mirage::make_probe_set(s.question, s.subject, s.modality, media.at(s.modality),
                                         config_.mirage.templates);
    auto backend = backends.at(s.modality);
    for (std::size_t i = 0; i < 4; ++i) {
      const ExpertQuery q = probe_query(run->probes, i);
      run->futures[i] = std::async(std::launch::async, [backend, q, &live]() {
        ProbeOutcome out;
        try {
          out.response = gateway::query(*backend, q);
          TraceEvent e;
          e.kind = "probe";
          e.modality = q.modality;
          e.probe_role = q.probe_role;
          e.question = q.question;
          e.text = out.response->text;
          e.latency_ms = out.response->latency_ms;
          live.emit(e);
        } catch (const gateway::GatewayError& err) {
          out.error = err;
        }
        return out;
      });
    }
    runs.push_back(std::move(run));
  }
  for (auto& run : runs) {
    for (std::size_t i = 0; i < 4; ++i) run->outcomes[i] = run->futures[i].get();
  }

  // Deterministic reduction in modality order.
  std::map<Modality, double> confidences;
  for (auto& run : runs) {
    const auto m = run->sub.modality;
    const auto failed = std::find_if(run->outcomes.begin(), run->outcomes.end(),
                                     [](const ProbeOutcome& o) { return o.error.has_value(); });
    if (failed != run->outcomes.end()) {
      const auto idx = static_cast<std::size_t>(failed - run->outcomes.begin());
      result.degraded_modalities.insert(m);
      result.notes.push_back(fmt::format("{} expert unavailable ({}); excluded from weighting.", display_name(m),
                                         failed->error->what()));
      for (std::size_t i = 0; i < 4; ++i) {
        const auto& q = probe_query(run->probes, i);
        TraceEvent e;
        e.kind = "probe";
        e.modality = m;
        e.probe_role = q.probe_role;
        e.question = q.question;
        if (run->outcomes[i].response) {
          e.text = run->outcomes[i].response->text;
          e.latency_ms = run->outcomes[i].response->latency_ms;
        } else {
          e.scores = json{{"error", std::string(gateway::to_string(run->outcomes[i].error->category()))}};
        }
        record(e);
      }
      TraceEvent d;
      d.kind = "degraded";
      d.modality = m;
      d.probe_role = probe_query(run->probes, idx).probe_role;
      d.text = failed->error->what();
      record(d);
      live.emit(d);
      continue;
    }

    for (std::size_t i = 0; i < 4; ++i) run->probes.responses[kAllProbeRoles[i]] = *run->outcomes[i].response;
    auto finding = mirage::verify(run->probes, config_.mirage);

    const auto& r = run->probes.responses;
    const std::array<mirage::TokenSet, 3> present{mirage::tokenize(r.at(ProbeRole::Rephrase1).text),
                                                  mirage::tokenize(r.at(ProbeRole::Rephrase2).text),
                                                  mirage::tokenize(r.at(ProbeRole::Rephrase3).text)};
    const auto base = mirage::tokenize(r.at(ProbeRole::ImageAbsent).text);
    for (std::size_t i = 0; i < 4; ++i) {
      const auto& q = probe_query(run->probes, i);
      const auto& resp = r.at(q.probe_role);
      TraceEvent e;
      e.kind = "probe";
      e.modality = m;
      e.probe_role = q.probe_role;
      e.question = q.question;
      e.text = resp.text;
      e.latency_ms = resp.latency_ms;
      if (i < 3) {
        double peer = 0.0;
        for (std::size_t k = 0; k < 3; ++k) {
          if (k != i) peer += mirage::jaccard(present[i], present[k]) / 2.0;
        }
        e.scores = json{{"similarity_to_baseline", mirage::jaccard(present[i], base)}, {"mean_similarity_to_peers", peer}};
      } else {
        e.scores = json{{"image_absent_similarity", finding.image_absent_similarity}};
      }
      record(e);
    }
    TraceEvent fe;
    fe.kind = "finding";
    fe.modality = m;
    fe.question = finding.sub_query;
    fe.text = finding.answer_text;
    fe.scores = finding;
    record(fe);
    live.emit(fe);

    confidences[m] = finding.confidence;
    if (finding.mirage_flagged) result.flagged_modalities.insert(m);
    result.findings.push_back(std::move(finding));
  }

  if (result.findings.empty()) {
    throw OrchestrationError("orchestrate: every modality expert failed; no finding available");
  }

  result.weights = confidence_weights(confidences);
  result.conflicts = resolve_conflict(result.findings, lexicon_);
  {
    TraceEvent e;
    e.kind = "conflict";
    e.text = result.conflicts.summary;
    record(e);
    live.emit(e);
  }

  if (!result.flagged_modalities.empty()) {
    std::string names;
    std::string sims;
    for (const auto& f : result.findings) {
      if (!f.mirage_flagged) continue;
      names += fmt::format("{}{}", names.empty() ? "" : ", ", display_name(f.modality));
      sims += fmt::format("{}{} {:.2f}", sims.empty() ? "" : ", ", display_name(f.modality), f.image_absent_similarity);
    }
    result.uncertainty_note = fmt::format(
        "Possible mirage reasoning for {}: the expert answer barely changed when the media was withheld "
        "(image-absent similarity {}; threshold {:.2f}). These findings may not be grounded in the supplied data "
        "and contribute only in proportion to their confidence.",
        names, sims, config_.mirage.threshold);
  }

  std::vector<const mirage::VerifiedFinding*> ordered;
  for (const auto& f : result.findings) ordered.push_back(&f);
  std::stable_sort(ordered.begin(), ordered.end(), [&](const auto* a, const auto* b) {
    const double wa = result.weights.at(a->modality);
    const double wb = result.weights.at(b->modality);
    if (wa != wb) return wa > wb;
    return precedence(a->modality) > precedence(b->modality);
  });
  std::string answer = result.conflicts.summary;
  for (const auto* f : ordered) {
    answer += fmt::format("\n{} (weight {:.2f}, confidence {:.2f}{}): {}", display_name(f->modality),
                          result.weights.at(f->modality), f->confidence, f->mirage_flagged ? ", mirage-flagged" : "",
                          f->answer_text);
  }
  if (result.uncertainty_note) answer += "\nNote: " + *result.uncertainty_note;
  result.final_answer = std::move(answer);

  {
    TraceEvent e;
    e.kind = "final";
    e.text = result.final_answer;
    json w = json::object();
    for (const auto& [m, v] : result.weights) w[std::string(to_string(m))] = v;
    e.scores = json{{"weights", w}};
    record(e);
    live.emit(e);
  }
  result.trace = std::move(trace);
  return result;
}

// ---- JSON ----

void to_json(json& j, const TraceEvent& e) {
  j = json{{"seq", e.seq}, {"kind", e.kind}, {"question", e.question}, {"text", e.text}, {"latency_ms", e.latency_ms},
           {"scores", e.scores}};
  j["modality"] = e.modality ? json(*e.modality) : json(nullptr);
  j["probe_role"] = e.probe_role ? json(std::string(to_string(*e.probe_role))) : json(nullptr);
}

void from_json(const json& j, TraceEvent& e) {
  e.seq = j.at("seq").get<std::uint64_t>();
  e.kind = j.at("kind").get<std::string>();
  e.question = j.value("question", std::string{});
  e.text = j.value("text", std::string{});
  e.latency_ms = j.value("latency_ms", std::uint64_t{0});
  e.scores = j.value("scores", json::object());
  e.modality = j.contains("modality") && !j["modality"].is_null() ? std::optional(j["modality"].get<Modality>())
                                                                   : std::nullopt;
  e.probe_role = j.contains("probe_role") && !j["probe_role"].is_null()
                     ? std::optional(probe_role_from_string(j["probe_role"].get<std::string>()))
                     : std::nullopt;
}

void to_json(json& j, const OrchestrationResult& r) {
  json weights = json::object();
  for (const auto& [m, w] : r.weights) weights[std::string(to_string(m))] = w;
  json contests = json::array();
  for (const auto& c : r.conflicts.contests) {
    contests.push_back({{"subject", c.subject},
                        {"winner", c.winner},
                        {"loser", c.loser},
                        {"winner_positive", c.winner_positive},
                        {"winner_confidence", c.winner_confidence},
                        {"loser_confidence", c.loser_confidence}});
  }
  j = json{{"final_answer", r.final_answer},
           {"findings", r.findings},
           {"weights", weights},
           {"flagged_modalities", r.flagged_modalities},
           {"degraded_modalities", r.degraded_modalities},
           {"uncertainty_note", r.uncertainty_note ? json(*r.uncertainty_note) : json(nullptr)},
           {"notes", r.notes},
           {"conflicts", {{"summary", r.conflicts.summary}, {"contests", contests}}},
           {"trace", r.trace}};
}

void from_json(const json& j, OrchestrationResult& r) {
  r = OrchestrationResult{};
  r.final_answer = j.at("final_answer").get<std::string>();
  r.findings = j.at("findings").get<std::vector<mirage::VerifiedFinding>>();
  for (const auto& [k, v] : j.at("weights").items()) r.weights[modality_from_string(k)] = v.get<double>();
  for (const auto& m : j.value("flagged_modalities", json::array())) r.flagged_modalities.insert(m.get<Modality>());
  for (const auto& m : j.value("degraded_modalities", json::array())) r.degraded_modalities.insert(m.get<Modality>());
  if (j.contains("uncertainty_note") && !j["uncertainty_note"].is_null()) {
    r.uncertainty_note = j["uncertainty_note"].get<std::string>();
  }
  r.notes = j.value("notes", std::vector<std::string>{});
  if (j.contains("conflicts")) {
    r.conflicts.summary = j["conflicts"].value("summary", std::string{});
    for (const auto& c : j["conflicts"].value("contests", json::array())) {
      r.conflicts.contests.push_back(ContestedAssertion{
          c.at("subject").get<std::string>(), c.at("winner").get<Modality>(), c.at("loser").get<Modality>(),
          c.at("winner_positive").get<bool>(), c.at("winner_confidence").get<double>(),
          c.at("loser_confidence").get<double>()});
    }
  }
  r.trace = j.value("trace", json::array()).get<std::vector<TraceEvent>>();
}

std::string trace_to_jsonl(const std::vector<TraceEvent>& trace) {
  std::string out;
  for (const auto& e : trace) {
    out += json(e).dump();
    out += '\n';
  }
  return out;
}

}  // namespace cardio::orchestrator
