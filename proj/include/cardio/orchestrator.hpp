#pragma once

// Multimodal orchestration: route a clinical question to modality experts,
// verify every expert answer with counterfactual probes, weight modalities by
// confidence and compose the final answer. Also owns chat sessions.

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "cardio/domain.hpp"
#include "cardio/gateway.hpp"
#include "cardio/mirage.hpp"

namespace cardio::orchestrator {

struct SubQuery {
  Modality modality = Modality::Ecg;
  std::string question;
  std::string subject;
  std::string derived_from;
};

/// Keyword routing. Condition rules expand a diagnosis into fixed per-modality
/// sub-questions; term rules send the question itself to one modality.
struct RoutingTable {
  struct SubRoutine {
    Modality modality = Modality::Ecg;
    std::string question;
    std::string subject;
  };
  struct ConditionRule {
    std::string name;
    std::vector<std::string> keywords;
    std::vector<SubRoutine> routines;
  };
  struct TermRule {
    std::string keyword;
    Modality modality = Modality::Ecg;
    std::string subject;  // empty: the keyword itself
  };

  std::vector<ConditionRule> conditions;
  std::vector<TermRule> terms;

  static RoutingTable from_json(const nlohmann::json& j);
  static RoutingTable load(const std::string& path);
};

/// True if the token sequence of `keyword` occurs contiguously in `text`.
bool contains_phrase(std::string_view text, std::string_view keyword);

/// Rule-based decomposition; broadcasts the full question to every available
/// modality when no rule matches. Sub-queries come out in ECG, Echo, CMR order.
std::vector<SubQuery> decompose(std::string_view question, const std::set<Modality>& available,
                                const RoutingTable& table, std::string_view parent_id = {});

/// Modalities the routing rules select for `question`, regardless of availability.
std::set<Modality> routed_modalities(std::string_view question, const RoutingTable& table);

/// Asks `backend` for a JSON decomposition and falls back to the rules when the
/// reply cannot be parsed or names unavailable modalities only.
std::vector<SubQuery> decompose_remote(gateway::ExpertBackend& backend, std::string_view question,
                                       const std::set<Modality>& available, const RoutingTable& table,
                                       std::string_view parent_id = {});

struct PolarityLexicon {
  std::set<std::string> positive;
  std::set<std::string> negative;
  std::set<std::string> negation;
  std::set<std::string> stopwords;

  static PolarityLexicon from_json(const nlohmann::json& j);
  static PolarityLexicon load(const std::string& path);
  static PolarityLexicon builtin();
};

/// A polar statement extracted from one clause of an answer.
struct Assertion {
  std::string head;    // last content token of the noun phrase
  std::string phrase;  // content tokens joined by spaces
  bool positive = true;
};

std::vector<Assertion> extract_assertions(std::string_view answer, const PolarityLexicon& lexicon);

struct ContestedAssertion {
  std::string subject;
  Modality winner = Modality::Ecg;
  Modality loser = Modality::Ecg;
  bool winner_positive = true;
  double winner_confidence = 0.0;
  double loser_confidence = 0.0;
};

struct ConflictResolution {
  std::string summary;
  std::vector<ContestedAssertion> contests;
};

/// Rank used to break exact confidence ties: CMR > Echo > ECG.
int precedence(Modality m);

ConflictResolution resolve_conflict(const std::vector<mirage::VerifiedFinding>& findings,
                                    const PolarityLexicon& lexicon);

struct TraceEvent {
  std::uint64_t seq = 0;
  std::string kind;  // decompose | probe | finding | degraded | excluded | conflict | final
  std::optional<Modality> modality;
  std::optional<ProbeRole> probe_role;
  std::string question;
  std::string text;
  std::uint64_t latency_ms = 0;
  nlohmann::json scores = nlohmann::json::object();
};

/// Receives live events in arrival order (may be invoked from worker threads,
/// calls are serialized).
using TraceSink = std::function<void(const TraceEvent&)>;

struct OrchestrationResult {
  std::string final_answer;
  std::vector<mirage::VerifiedFinding> findings;
  std::map<Modality, double> weights;
  std::set<Modality> flagged_modalities;
  std::set<Modality> degraded_modalities;
  std::optional<std::string> uncertainty_note;
  std::vector<std::string> notes;
  ConflictResolution conflicts;
  std::vector<TraceEvent> trace;
};

class OrchestrationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using MediaMap = std::map<Modality, std::vector<MediaRef>>;
using BackendMap = std::map<Modality, gateway::BackendPtr>;

struct OrchestratorConfig {
  mirage::MirageConfig mirage;
  bool remote_decomposer = false;
  gateway::BackendPtr decomposer;  // used when remote_decomposer is set
};

/// w_m = c_m / Σc over the given confidences; uniform when all are zero.
std::map<Modality, double> confidence_weights(const std::map<Modality, double>& confidences);

class Orchestrator {
 public:
  Orchestrator(OrchestratorConfig config, RoutingTable routing, PolarityLexicon lexicon);

  /// Full pipeline for one question. `context` (per modality) is appended to
  /// the sub-query text of broadcast queries. A `focus` restricts the turn to
  /// one modality.
  OrchestrationResult orchestrate(std::string_view question, const MediaMap& media, const BackendMap& backends,
                                  const TraceSink& sink = {}, const std::map<Modality, std::string>& context = {},
                                  std::optional<Modality> focus = std::nullopt) const;

  const RoutingTable& routing() const { return routing_; }
  const PolarityLexicon& lexicon() const { return lexicon_; }
  const OrchestratorConfig& config() const { return config_; }

 private:
  OrchestratorConfig config_;
  RoutingTable routing_;
  PolarityLexicon lexicon_;
};

void to_json(nlohmann::json& j, const TraceEvent& e);
void from_json(const nlohmann::json& j, TraceEvent& e);
void to_json(nlohmann::json& j, const OrchestrationResult& r);
void from_json(const nlohmann::json& j, OrchestrationResult& r);

/// JSON-Lines export of a trace.
std::string trace_to_jsonl(const std::vector<TraceEvent>& trace);

// ---- sessions ----

struct Turn {
  std::string user_text;
  OrchestrationResult result;
};

struct Session {
  std::string id;
  std::vector<Turn> history;
  MediaMap media;
  std::set<Modality> locked;  // modalities whose media a turn has referenced
};

void to_json(nlohmann::json& j, const Session& s);
void from_json(const nlohmann::json& j, Session& s);

class UnknownSession : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class SessionBusy : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class MediaLocked : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Thread-safe session registry. At most one turn per session is in flight;
/// a concurrent second turn raises SessionBusy.
class SessionManager {
 public:
  SessionManager(std::shared_ptr<const Orchestrator> orchestrator, BackendMap backends);

  std::string create(const std::string& id_hint = {});
  void attach_media(const std::string& id, const MediaRef& ref);
  Session get(const std::string& id) const;
  std::vector<std::string> ids() const;
  void restore(Session session);

  /// Number of the next turn (0-based) for `id`.
  std::size_t next_turn_index(const std::string& id) const;

  OrchestrationResult chat_turn(const std::string& id, const std::string& user_text, const TraceSink& sink = {},
                                std::optional<Modality> focus = std::nullopt);

 private:
  struct Slot {
    mutable std::mutex mutex;
    Session session;
    bool busy = false;
  };
  std::shared_ptr<Slot> slot(const std::string& id) const;

  std::shared_ptr<const Orchestrator> orchestrator_;
  BackendMap backends_;
  mutable std::mutex mutex_;
  std::map<std::string, std::shared_ptr<Slot>> sessions_;
  std::uint64_t counter_ = 0;
};

}  // namespace cardio::orchestrator
