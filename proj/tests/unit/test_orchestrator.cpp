#include <chrono>
#include <condition_variable>
#include <future>
#include <sstream>

#include <gtest/gtest.h>

#include "cardio/orchestrator.hpp"
#include "test_util.hpp"

using namespace cardio;
using namespace cardio::orchestrator;
using nlohmann::json;

namespace {

const char* kAmyloid = "Does this patient have cardiac amyloidosis?";

RoutingTable routing() { return RoutingTable::load(testutil::data_path("routing_table.json")); }
PolarityLexicon lexicon() { return PolarityLexicon::load(testutil::data_path("polarity_lexicon.json")); }

gateway::BackendPtr mock(const std::string& rel) {
  return std::make_shared<gateway::MockBackend>(gateway::MockTable::load(testutil::data_path(rel)));
}

gateway::BackendPtr mock_json(const json& table) {
  return std::make_shared<gateway::MockBackend>(gateway::MockTable::from_json(table));
}

BackendMap grounded_backends() {
  return {{Modality::Ecg, mock("mocks/ecg_grounded.json")},
          {Modality::Echo, mock("mocks/echo_grounded.json")},
          {Modality::Cmr, mock("mocks/cmr_grounded.json")}};
}

MediaMap all_media() {
  return {{Modality::Ecg, {{Modality::Ecg, testutil::data_path("samples/ecg_sample.xml"), MediaKind::SignalXml}}},
          {Modality::Echo, {{Modality::Echo, testutil::data_path("samples/echo_sample.ppm"), MediaKind::Image}}},
          {Modality::Cmr, {{Modality::Cmr, testutil::data_path("samples/cmr_manifest.json"), MediaKind::StudyManifest}}}};
}

MediaMap only(Modality m) {
  auto all = all_media();
  return {{m, all.at(m)}};
}

Orchestrator make_orchestrator(RoutingTable table = routing()) { return Orchestrator({}, std::move(table), lexicon()); }

double weight_sum(const OrchestrationResult& r) {
  double s = 0.0;
  for (const auto& [_, w] : r.weights) s += w;
  return s;
}

// Blocks every query until released; counts queries in flight.
class GateBackend final : public gateway::ExpertBackend {
 public:
  const std::string& id() const override { return id_; }
  gateway::BackendKind kind() const override { return gateway::BackendKind::MockScripted; }
  ExpertResponse query(const ExpertQuery& q) override {
    std::unique_lock lock(mutex_);
    ++waiting_;
    cv_.notify_all();
    cv_.wait(lock, [&] { return open_; });
    return ExpertResponse{q.media ? "present answer text here" : "nothing to see", q.modality, q.probe_role, 0, id_};
  }
  std::string complete(std::string_view) override { return ""; }

  void wait_for_waiters(int n) {
    std::unique_lock lock(mutex_);
    cv_.wait(lock, [&] { return waiting_ >= n; });
  }
  void open() {
    std::lock_guard lock(mutex_);
    open_ = true;
    cv_.notify_all();
  }

 private:
  std::string id_ = "gate";
  std::mutex mutex_;
  std::condition_variable cv_;
  int waiting_ = 0;
  bool open_ = false;
};

class ReplyBackend final : public gateway::ExpertBackend {
 public:
  explicit ReplyBackend(std::string reply) : reply_(std::move(reply)) {}
  const std::string& id() const override { return id_; }
  gateway::BackendKind kind() const override { return gateway::BackendKind::MockScripted; }
  ExpertResponse query(const ExpertQuery& q) override { return ExpertResponse{reply_, q.modality, q.probe_role}; }
  std::string complete(std::string_view prompt) override {
    last_prompt = std::string(prompt);
    return reply_;
  }
  std::string last_prompt;

 private:
  std::string id_ = "reply";
  std::string reply_;
};

mirage::VerifiedFinding finding(Modality m, std::string text, double confidence) {
  mirage::VerifiedFinding f;
  f.modality = m;
  f.answer_text = std::move(text);
  f.confidence = confidence;
  return f;
}

}  // namespace

TEST(Decompose, AmyloidosisExpandsToThreeSubRoutines) {
  const auto subs = decompose(kAmyloid, {Modality::Ecg, Modality::Echo, Modality::Cmr}, routing());
  ASSERT_EQ(subs.size(), 3u);
  EXPECT_EQ(subs[0].modality, Modality::Ecg);
  EXPECT_EQ(subs[0].question, "Is low voltage present?");
  EXPECT_EQ(subs[1].modality, Modality::Echo);
  EXPECT_EQ(subs[1].question, "Estimate wall thickness");
  EXPECT_EQ(subs[2].modality, Modality::Cmr);
  EXPECT_EQ(subs[2].question, "Is there late gadolinium enhancement");
}

TEST(Decompose, TermRoutesToOneModality) {
  const auto subs = decompose("Is low voltage present?", {Modality::Ecg}, routing());
  ASSERT_EQ(subs.size(), 1u);
  EXPECT_EQ(subs[0].modality, Modality::Ecg);
  EXPECT_EQ(subs[0].question, "Is low voltage present?");
  const auto lge = decompose("Any LGE here?", {Modality::Ecg, Modality::Cmr}, routing());
  ASSERT_EQ(lge.size(), 1u);
  EXPECT_EQ(lge[0].modality, Modality::Cmr);
}

TEST(Decompose, NoKeywordBroadcasts) {
  const auto subs = decompose("What do you think?", {Modality::Ecg, Modality::Echo}, routing());
  ASSERT_EQ(subs.size(), 2u);
  EXPECT_EQ(subs[0].question, "What do you think?");
  EXPECT_EQ(subs[1].modality, Modality::Echo);
  EXPECT_THROW(decompose("x", {}, routing()), std::invalid_argument);
}

TEST(Decompose, RoutedButUnavailableFallsBackToBroadcast) {
  // "voltage" routes to ECG only; with Echo alone the question is broadcast.
  const auto subs = decompose("Is low voltage present?", {Modality::Echo}, routing());
  ASSERT_EQ(subs.size(), 1u);
  EXPECT_EQ(subs[0].modality, Modality::Echo);
}

TEST(Decompose, PhraseMatchingIsTokenBased) {
  EXPECT_TRUE(contains_phrase("Is there Late Gadolinium enhancement?", "late gadolinium"));
  EXPECT_FALSE(contains_phrase("gadolinium late", "late gadolinium"));
  EXPECT_FALSE(contains_phrase("voltages", "voltage"));
}

TEST(Decompose, RemoteReplyIsParsed) {
  ReplyBackend backend(R"(Sure: {"subqueries": [{"modality": "echo", "question": "Is the septum thick?", "subject": "septum"},
                          {"modality": "cmr", "question": "Any scar?"}]})");
  const auto subs = decompose_remote(backend, "anything", {Modality::Echo}, routing());
  ASSERT_EQ(subs.size(), 1u);
  EXPECT_EQ(subs[0].question, "Is the septum thick?");
  EXPECT_EQ(subs[0].subject, "septum");
  EXPECT_NE(backend.last_prompt.find("echo"), std::string::npos);
}

TEST(Decompose, RemoteGarbageFallsBackToRules) {
  ReplyBackend backend("I cannot help with that.");
  const auto subs = decompose_remote(backend, kAmyloid, {Modality::Ecg, Modality::Echo}, routing());
  ASSERT_EQ(subs.size(), 2u);
  EXPECT_EQ(subs[0].question, "Is low voltage present?");
}

TEST(Weights, ProportionalToConfidence) {
  const auto w = confidence_weights({{Modality::Ecg, 0.8}, {Modality::Echo, 0.2}});
  EXPECT_NEAR(w.at(Modality::Ecg), 0.8, 1e-12);
  EXPECT_NEAR(w.at(Modality::Echo), 0.2, 1e-12);
  const auto u = confidence_weights({{Modality::Ecg, 0.0}, {Modality::Echo, 0.0}, {Modality::Cmr, 0.0}});
  for (const auto& [_, v] : u) EXPECT_DOUBLE_EQ(v, 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(confidence_weights({{Modality::Cmr, 0.37}}).at(Modality::Cmr), 1.0);
}

TEST(Conflict, AgreementHasNoContest) {
  const auto r = resolve_conflict({finding(Modality::Ecg, "Low voltage is present.", 0.9),
                                   finding(Modality::Echo, "Walls are thickened.", 0.7)},
                                  lexicon());
  EXPECT_TRUE(r.contests.empty());
}

TEST(Conflict, HigherConfidenceWins) {
  const auto r = resolve_conflict({finding(Modality::Ecg, "low voltage present", 0.9),
                                   finding(Modality::Echo, "voltage normal", 0.4)},
                                  lexicon());
  ASSERT_EQ(r.contests.size(), 1u);
  EXPECT_EQ(r.contests[0].subject, "voltage");
  EXPECT_EQ(r.contests[0].winner, Modality::Ecg);
  EXPECT_TRUE(r.contests[0].winner_positive);
  EXPECT_NE(r.summary.find("ECG"), std::string::npos);
}

TEST(Conflict, TieGoesToCmr) {
  const auto r = resolve_conflict({finding(Modality::Ecg, "No pericardial effusion.", 0.6),
                                   finding(Modality::Cmr, "Pericardial effusion is present.", 0.6)},
                                  lexicon());
  ASSERT_EQ(r.contests.size(), 1u);
  EXPECT_EQ(r.contests[0].winner, Modality::Cmr);
  EXPECT_EQ(r.contests[0].loser, Modality::Ecg);
}

TEST(Conflict, NegationFlipsPolarity) {
  const auto a = extract_assertions("There is no late enhancement, but the septum is thickened.", lexicon());
  ASSERT_EQ(a.size(), 2u);
  EXPECT_EQ(a[0].head, "enhancement");
  EXPECT_FALSE(a[0].positive);
  EXPECT_EQ(a[1].head, "septum");
  EXPECT_TRUE(a[1].positive);
}

TEST(Orchestrate, SingleGroundedModality) {
  const auto r = make_orchestrator().orchestrate("Is low voltage present?", only(Modality::Ecg), grounded_backends());
  ASSERT_EQ(r.findings.size(), 1u);
  EXPECT_GT(r.findings[0].confidence, 0.0);
  EXPECT_DOUBLE_EQ(r.weights.at(Modality::Ecg), 1.0);
  EXPECT_FALSE(r.uncertainty_note);
  EXPECT_TRUE(r.flagged_modalities.empty());
  EXPECT_NE(r.final_answer.find("Low voltage is present"), std::string::npos);
}

TEST(Orchestrate, MirageOnEcgIsFlaggedAndDownWeighted) {
  BackendMap b = grounded_backends();
  b[Modality::Ecg] = mock("mocks/ecg_mirage.json");
  const auto r = make_orchestrator().orchestrate(kAmyloid, all_media(), b);
  ASSERT_EQ(r.findings.size(), 3u);
  EXPECT_EQ(r.flagged_modalities, std::set<Modality>{Modality::Ecg});
  ASSERT_TRUE(r.uncertainty_note);
  EXPECT_NE(r.uncertainty_note->find("ECG"), std::string::npos);
  EXPECT_NEAR(weight_sum(r), 1.0, 1e-9);
  double total = 0.0;
  for (const auto& f : r.findings) total += f.confidence;
  const auto& ecg = *std::find_if(r.findings.begin(), r.findings.end(), [](const auto& f) { return f.modality == Modality::Ecg; });
  EXPECT_DOUBLE_EQ(ecg.confidence, 0.5);
  EXPECT_NEAR(r.weights.at(Modality::Ecg), ecg.confidence / total, 1e-12);
  EXPECT_LT(r.weights.at(Modality::Ecg), r.weights.at(Modality::Echo));
  EXPECT_NE(r.final_answer.find("mirage-flagged"), std::string::npos);
}

TEST(Orchestrate, FinalAnswerOrderedByWeight) {
  BackendMap b = grounded_backends();
  b[Modality::Ecg] = mock("mocks/ecg_mirage.json");
  const auto r = make_orchestrator().orchestrate(kAmyloid, all_media(), b);
  std::vector<std::pair<double, std::size_t>> positions;
  for (const auto& [m, w] : r.weights) {
    const auto pos = r.final_answer.find(std::string(display_name(m)) + " (weight");
    ASSERT_NE(pos, std::string::npos);
    positions.emplace_back(w, pos);
  }
  std::sort(positions.begin(), positions.end(), [](auto a, auto b) { return a.first > b.first; });
  for (std::size_t i = 1; i < positions.size(); ++i) EXPECT_LT(positions[i - 1].second, positions[i].second);
  EXPECT_EQ(r.final_answer.rfind(r.conflicts.summary, 0), 0u);
}

TEST(Orchestrate, TraceHasEveryProbeOnceWithScores) {
  const auto r = make_orchestrator().orchestrate(kAmyloid, all_media(), grounded_backends());
  std::map<std::pair<Modality, ProbeRole>, int> seen;
  for (std::size_t i = 0; i < r.trace.size(); ++i) {
    const auto& e = r.trace[i];
    EXPECT_EQ(e.seq, i);
    if (e.kind != "probe") continue;
    ++seen[{*e.modality, *e.probe_role}];
    EXPECT_FALSE(e.scores.empty());
    EXPECT_FALSE(e.text.empty());
  }
  EXPECT_EQ(seen.size(), 12u);
  for (const auto& [_, n] : seen) EXPECT_EQ(n, 1);
  EXPECT_EQ(r.trace.front().kind, "decompose");
  EXPECT_EQ(r.trace.back().kind, "final");
  EXPECT_EQ(std::count_if(r.trace.begin(), r.trace.end(), [](const auto& e) { return e.kind == "finding"; }), 3);
}

TEST(Orchestrate, LiveSinkSeesSameProbes) {
  std::vector<TraceEvent> live;
  const auto r = make_orchestrator().orchestrate(kAmyloid, all_media(), grounded_backends(),
                                                 [&](const TraceEvent& e) { live.push_back(e); });
  for (std::size_t i = 0; i < live.size(); ++i) EXPECT_EQ(live[i].seq, i);
  EXPECT_EQ(std::count_if(live.begin(), live.end(), [](const auto& e) { return e.kind == "probe"; }), 12);
  EXPECT_EQ(live.back().kind, "final");
  EXPECT_EQ(live.back().text, r.final_answer);
}

TEST(Orchestrate, DeterministicAcrossRuns) {
  BackendMap b = grounded_backends();
  b[Modality::Ecg] = mock("mocks/ecg_mirage.json");
  const auto o = make_orchestrator();
  const auto first = json(o.orchestrate(kAmyloid, all_media(), b)).dump();
  for (int i = 0; i < 5; ++i) EXPECT_EQ(json(o.orchestrate(kAmyloid, all_media(), b)).dump(), first);
}

TEST(Orchestrate, DegradedModalityIsExcludedFromWeights) {
  BackendMap b = grounded_backends();
  b[Modality::Echo] = mock_json({{"id", "echo-broken"}, {"kind", "mock-scripted"}, {"modality", "echo"},
                                 {"entries", json::array({{{"question", "Estimate wall thickness"},
                                                           {"subject", "left ventricular wall thickness"},
                                                           {"fail", "transport"}}})}});
  const auto r = make_orchestrator().orchestrate(kAmyloid, all_media(), b);
  EXPECT_EQ(r.degraded_modalities, std::set<Modality>{Modality::Echo});
  EXPECT_FALSE(r.weights.count(Modality::Echo));
  EXPECT_NEAR(weight_sum(r), 1.0, 1e-9);
  EXPECT_EQ(r.findings.size(), 2u);
  EXPECT_TRUE(std::any_of(r.trace.begin(), r.trace.end(), [](const auto& e) { return e.kind == "degraded"; }));
}

TEST(Orchestrate, AllDegradedIsAFault) {
  auto broken = mock_json({{"id", "x"}, {"kind", "mock-scripted"}, {"modality", "ecg"},
                           {"entries", json::array({{{"question", "Is low voltage present?"},
                                                     {"subject", "QRS voltage"}, {"fail", "timeout"}}})}});
  EXPECT_THROW(make_orchestrator().orchestrate("Is low voltage present?", only(Modality::Ecg), {{Modality::Ecg, broken}}),
               OrchestrationError);
}

TEST(Orchestrate, MissingMediaIsExcludedWithNote) {
  const auto r = make_orchestrator().orchestrate(kAmyloid, only(Modality::Ecg), grounded_backends());
  ASSERT_EQ(r.findings.size(), 1u);
  ASSERT_EQ(r.notes.size(), 2u);
  EXPECT_NE(r.notes[0].find("Echo was requested but no media is attached"), std::string::npos);
  EXPECT_NE(r.notes[1].find("CMR"), std::string::npos);
  EXPECT_EQ(std::count_if(r.trace.begin(), r.trace.end(), [](const auto& e) { return e.kind == "excluded"; }), 2);
  EXPECT_THROW(make_orchestrator().orchestrate(kAmyloid, {}, grounded_backends()), OrchestrationError);
}

TEST(Orchestrate, FocusRestrictsToOneModality) {
  const auto r = make_orchestrator().orchestrate(kAmyloid, all_media(), grounded_backends(), {}, {}, Modality::Cmr);
  ASSERT_EQ(r.findings.size(), 1u);
  EXPECT_EQ(r.findings[0].modality, Modality::Cmr);
  EXPECT_EQ(r.findings[0].sub_query, "Is there late gadolinium enhancement");
  EXPECT_TRUE(r.notes.empty());
  EXPECT_THROW(make_orchestrator().orchestrate(kAmyloid, only(Modality::Ecg), grounded_backends(), {}, {}, Modality::Cmr),
               OrchestrationError);
}

TEST(Orchestrate, ResultJsonRoundTrip) {
  BackendMap b = grounded_backends();
  b[Modality::Ecg] = mock("mocks/ecg_mirage.json");
  const auto r = make_orchestrator().orchestrate(kAmyloid, all_media(), b);
  const json j = r;
  const auto back = j.get<OrchestrationResult>();
  EXPECT_EQ(json(back), j);
  std::istringstream lines(trace_to_jsonl(r.trace));
  std::string line;
  std::size_t n = 0;
  while (std::getline(lines, line)) {
    EXPECT_EQ(json::parse(line).at("seq").get<std::size_t>(), n);
    ++n;
  }
  EXPECT_EQ(n, r.trace.size());
}

TEST(MirageScenario, FlagsExactlyTheMirageCases) {
  const auto doc = json::parse(read_file(testutil::data_path("scenarios/mirage_rates.json")));
  BackendMap backends;
  for (const auto& [name, table] : doc.at("tables").items()) backends[modality_from_string(name)] = mock_json(table);
  OrchestratorConfig cfg;
  cfg.mirage.threshold = doc.at("threshold").get<double>();
  const Orchestrator o(cfg, RoutingTable{}, lexicon());

  std::map<Modality, std::array<int, 4>> counts;  // mirage, grounded, missed, false flags
  for (const auto& c : doc.at("cases")) {
    const auto m = c.at("modality").get<Modality>();
    const auto r = o.orchestrate(c.at("question").get<std::string>(), only(m), backends);
    ASSERT_EQ(r.findings.size(), 1u);
    const bool mirage = c.at("mirage").get<bool>();
    const bool flagged = r.findings[0].mirage_flagged;
    auto& k = counts[m];
    ++k[mirage ? 0 : 1];
    if (mirage && !flagged) ++k[2];
    if (!mirage && flagged) ++k[3];
    const auto frac = c.at("image_absent_similarity");
    EXPECT_NEAR(r.findings[0].image_absent_similarity, frac[0].get<double>() / frac[1].get<double>(), 1e-12);
  }
  EXPECT_NEAR(counts[Modality::Ecg][0] / 200.0, 0.330, 1e-12);
  EXPECT_NEAR(counts[Modality::Echo][0] / 200.0, 0.385, 1e-12);
  EXPECT_NEAR(counts[Modality::Cmr][0] / 250.0, 0.364, 1e-12);
  for (const auto& [m, k] : counts) {
    EXPECT_EQ(k[2], 0) << "unflagged mirages for " << to_string(m);
    EXPECT_EQ(k[3], 0) << "false flags for " << to_string(m);
  }
}

// ---- sessions ----

namespace {

SessionManager make_manager(BackendMap backends = grounded_backends()) {
  return SessionManager(std::make_shared<Orchestrator>(make_orchestrator()), std::move(backends));
}

}  // namespace

TEST(Session, FirstTurnUsesAttachedMediaOnly) {
  auto mgr = make_manager();
  const auto id = mgr.create();
  mgr.attach_media(id, all_media().at(Modality::Ecg)[0]);
  const auto r = mgr.chat_turn(id, kAmyloid);
  ASSERT_EQ(r.findings.size(), 1u);
  EXPECT_EQ(r.findings[0].modality, Modality::Ecg);
  EXPECT_EQ(r.notes.size(), 2u);
  EXPECT_EQ(mgr.get(id).history.size(), 1u);
}

TEST(Session, FollowUpCarriesPriorFinding) {
  auto mgr = make_manager();
  const auto id = mgr.create("case-1");
  EXPECT_EQ(id, "case-1");
  mgr.attach_media(id, all_media().at(Modality::Ecg)[0]);
  const auto first = mgr.chat_turn(id, "Is low voltage present?");
  const auto second = mgr.chat_turn(id, "why?");
  ASSERT_EQ(second.findings.size(), 1u);
  EXPECT_NE(second.findings[0].sub_query.find("why? (Prior ECG finding: " + first.findings[0].answer_text),
            std::string::npos);
  const auto s = mgr.get(id);
  ASSERT_EQ(s.history.size(), 2u);
  EXPECT_EQ(s.history[1].user_text, "why?");
}

TEST(Session, MediaIsLockedAfterATurnReferencesIt) {
  auto mgr = make_manager();
  const auto id = mgr.create();
  mgr.attach_media(id, all_media().at(Modality::Ecg)[0]);
  mgr.chat_turn(id, "Is low voltage present?");
  EXPECT_THROW(mgr.attach_media(id, {Modality::Ecg, "other.xml", MediaKind::SignalXml}), MediaLocked);
  EXPECT_NO_THROW(mgr.attach_media(id, all_media().at(Modality::Echo)[0]));
}

TEST(Session, UnknownIdAndDuplicateHint) {
  auto mgr = make_manager();
  EXPECT_THROW(mgr.get("nope"), UnknownSession);
  EXPECT_THROW(mgr.chat_turn("nope", "x"), UnknownSession);
  const auto a = mgr.create("same");
  const auto b = mgr.create("same");
  EXPECT_NE(a, b);
}

TEST(Session, SecondConcurrentTurnIsRejected) {
  auto gate = std::make_shared<GateBackend>();
  auto mgr = make_manager({{Modality::Ecg, gate}});
  const auto id = mgr.create();
  mgr.attach_media(id, all_media().at(Modality::Ecg)[0]);
  auto first = std::async(std::launch::async, [&] { return mgr.chat_turn(id, "Is low voltage present?"); });
  gate->wait_for_waiters(4);
  EXPECT_THROW(mgr.chat_turn(id, "again"), SessionBusy);
  // other sessions are unaffected
  const auto other = mgr.create();
  EXPECT_NO_THROW(mgr.attach_media(other, all_media().at(Modality::Ecg)[0]));
  gate->open();
  EXPECT_EQ(first.get().findings.size(), 1u);
  EXPECT_NO_THROW(mgr.chat_turn(id, "again"));
  EXPECT_EQ(mgr.get(id).history.size(), 2u);
}

TEST(Session, JsonRoundTripAndRestore) {
  auto mgr = make_manager();
  const auto id = mgr.create();
  mgr.attach_media(id, all_media().at(Modality::Ecg)[0]);
  mgr.chat_turn(id, "Is low voltage present?");
  const json j = mgr.get(id);
  auto fresh = make_manager();
  fresh.restore(j.get<Session>());
  EXPECT_EQ(json(fresh.get(id)), j);
  EXPECT_NE(fresh.create(), id);
}
