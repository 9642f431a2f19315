// Acceptance suite. One PASS/FAIL line per criterion on stdout; exit status is
// the number of failures. Oracles here are written independently of the
// library code they check.

#include <bit>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <iostream>
#include <numeric>
#include <random>

#include <fmt/format.h>
#include <httplib.h>
#include <spdlog/spdlog.h>

#include "cardio/eval.hpp"
#include "cardio/grpo.hpp"
#include "cardio/media.hpp"
#include "cardio/mirage.hpp"
#include "cardio/orchestrator.hpp"
#include "cardio/service.hpp"

namespace fs = std::filesystem;
using namespace cardio;
using nlohmann::json;

namespace {

std::string data(const std::string& rel) { return (fs::path(CARDIO_DATA_DIR) / rel).string(); }
std::string fixture(const std::string& rel) { return (fs::path(CARDIO_TEST_DATA) / rel).string(); }

// Collects the first few problems of a criterion.
class Problems {
 public:
  void add(std::string what) {
    if (list_.size() < 3) list_.push_back(std::move(what));
    ++count_;
  }
  template <typename... Args>
  void check(bool ok, fmt::format_string<Args...> f, Args&&... args) {
    if (!ok) add(fmt::format(f, std::forward<Args>(args)...));
  }
  bool empty() const { return count_ == 0; }
  std::string str() const {
    std::string out;
    for (const auto& s : list_) out += (out.empty() ? "" : "; ") + s;
    if (count_ > list_.size()) out += fmt::format(" (+{} more)", count_ - list_.size());
    return out;
  }

 private:
  std::vector<std::string> list_;
  std::size_t count_ = 0;
};

struct Criterion {
  std::string name;
  double limit_s;  // 0 = no runtime bound
  std::function<std::string(Problems&)> run;  // returns a short summary on success
};

// ---- mirage protocol ----

std::string mirage_protocol(Problems& p) {
  const auto doc = json::parse(read_file(data("scenarios/mirage_rates.json")));
  orchestrator::BackendMap backends;
  for (const auto& [name, table] : doc.at("tables").items()) {
    backends[modality_from_string(name)] =
        std::make_shared<gateway::MockBackend>(gateway::MockTable::from_json(table));
  }
  orchestrator::OrchestratorConfig cfg;
  cfg.mirage.threshold = doc.at("threshold").get<double>();
  const orchestrator::Orchestrator o(cfg, orchestrator::RoutingTable{},
                                     orchestrator::PolarityLexicon::load(data("polarity_lexicon.json")));
  const std::map<Modality, std::string> media{{Modality::Ecg, "samples/ecg_sample.xml"},
                                              {Modality::Echo, "samples/echo_sample.ppm"},
                                              {Modality::Cmr, "samples/cmr_manifest.json"}};
  struct Tally {
    int cases = 0, mirage = 0, missed = 0, false_flags = 0;
  };
  std::map<Modality, Tally> t;
  for (const auto& c : doc.at("cases")) {
    const auto m = c.at("modality").get<Modality>();
    const auto kind = m == Modality::Ecg ? MediaKind::SignalXml
                      : m == Modality::Echo ? MediaKind::Image
                                            : MediaKind::StudyManifest;
    const auto r = o.orchestrate(c.at("question").get<std::string>(), {{m, {{m, data(media.at(m)), kind}}}}, backends);
    if (r.findings.size() != 1) {
      p.add(fmt::format("{} findings for one routed question", r.findings.size()));
      continue;
    }
    const bool mirage = c.at("mirage").get<bool>();
    const bool flagged = r.findings[0].mirage_flagged;
    auto& k = t[m];
    ++k.cases;
    k.mirage += mirage;
    k.missed += mirage && !flagged;
    k.false_flags += !mirage && flagged;
  }
  const std::map<Modality, double> expected{{Modality::Ecg, 0.330}, {Modality::Echo, 0.385}, {Modality::Cmr, 0.364}};
  std::string summary;
  for (const auto& [m, rate] : expected) {
    const auto& k = t[m];
    const double pre = k.cases ? double(k.mirage) / k.cases : 0.0;
    p.check(std::abs(pre - rate) < 5e-4, "{} scripted mirage rate {:.4f}, want {:.3f}", to_string(m), pre, rate);
    p.check(k.missed == 0, "{}: {} mirages passed unflagged", to_string(m), k.missed);
    p.check(k.false_flags == 0, "{}: {} grounded answers flagged", to_string(m), k.false_flags);
    summary += fmt::format("{}{} {:.1f}%->{:.1f}%", summary.empty() ? "" : ", ", to_string(m), 100 * pre,
                           k.cases ? 100.0 * k.missed / k.cases : 0.0);
  }
  return summary + ", false flags 0";
}

// ---- threshold semantics ----

mirage::ProbeSet probe_set(const std::array<std::string, 3>& present, const std::string& absent) {
  auto set = mirage::make_probe_set("Is low voltage present?", "QRS voltage", Modality::Ecg,
                                    {{Modality::Ecg, "ecg.xml", MediaKind::SignalXml}});
  for (std::size_t i = 0; i < 3; ++i) set.responses[kAllProbeRoles[i]] = {present[i], Modality::Ecg, kAllProbeRoles[i]};
  set.responses[ProbeRole::ImageAbsent] = {absent, Modality::Ecg, ProbeRole::ImageAbsent};
  return set;
}

std::string words(int from, int count) {
  std::string out;
  for (int i = from; i < from + count; ++i) out += fmt::format("{}t{}", out.empty() ? "" : " ", i);
  return out;
}

// Oracle Jaccard on whitespace-separated lowercase words (the random texts
// below contain nothing else).
double jaccard_words(const std::string& a, const std::string& b) {
  auto split = [](const std::string& s) {
    std::set<std::string> out;
    std::istringstream in(s);
    for (std::string w; in >> w;) out.insert(w);
    return out;
  };
  const auto x = split(a);
  const auto y = split(b);
  if (x.empty() && y.empty()) return 1.0;
  std::size_t inter = 0;
  for (const auto& w : x) inter += y.count(w);
  return double(inter) / double(x.size() + y.size() - inter);
}

std::string threshold_semantics(Problems& p) {
  // present = n shared tokens; baseline = first k of them: similarity k / n
  for (const auto& [k, n, flag] : std::vector<std::tuple<int, int, bool>>{{43, 50, true}, {17, 20, false}, {21, 25, false}}) {
    const auto present = words(0, n);
    const auto f = mirage::verify(probe_set({present, present, present}, words(0, k)));
    p.check(std::abs(f.image_absent_similarity - double(k) / n) < 1e-15, "similarity {} for {}/{}",
            f.image_absent_similarity, k, n);
    p.check(f.mirage_flagged == flag, "similarity {:.2f}: flagged={}", double(k) / n, f.mirage_flagged);
  }
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<int> len(0, 12);
  std::uniform_int_distribution<int> tok(0, 14);
  auto text = [&] {
    std::string s;
    for (int i = len(rng); i > 0; --i) s += fmt::format(" w{}", tok(rng));
    return s;
  };
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::array<std::string, 3> pr{text(), text(), text()};
    const auto b = text();
    const auto f = mirage::verify(probe_set(pr, b));
    const double c = (jaccard_words(pr[0], pr[1]) + jaccard_words(pr[0], pr[2]) + jaccard_words(pr[1], pr[2])) / 3;
    const double d = 1 - (jaccard_words(pr[0], b) + jaccard_words(pr[1], b) + jaccard_words(pr[2], b)) / 3;
    worst = std::max({worst, std::abs(f.confidence - (c + d) / 2), std::abs(f.consistency - c),
                      std::abs(f.divergence - d)});
  }
  p.check(worst <= 1e-12, "confidence off by {:.3g} on random probe sets", worst);
  return fmt::format("0.86 flagged, 0.85/0.84 not; 1000 random sets max error {:.1g}", worst);
}

// ---- statistics ----

// Exact two-sided McNemar from integer binomial coefficients.
double mcnemar_binomial(unsigned b, unsigned c) {
  const unsigned n = b + c;
  if (n == 0) return 1.0;
  std::vector<std::uint64_t> row{1};
  for (unsigned i = 1; i <= n; ++i) {
    std::vector<std::uint64_t> next(i + 1, 1);
    for (unsigned j = 1; j < i; ++j) next[j] = row[j - 1] + row[j];
    row = next;
  }
  std::uint64_t tail = 0;
  for (unsigned k = std::max(b, c); k <= n; ++k) tail += row[k];
  return std::min(1.0, 2.0 * double(tail) / std::ldexp(1.0, int(n)));
}

std::string statistics(Problems& p) {
  int mc = 0;
  for (unsigned b = 0; b <= 24; ++b) {
    for (unsigned c = 0; b + c <= 24; ++c, ++mc) {
      const double got = eval::mcnemar(b, c);
      const double want = mcnemar_binomial(b, c);
      p.check(std::abs(got - want) <= 1e-12, "mcnemar({},{}) = {} want {}", b, c, got, want);
    }
  }
  // Every split of ranks 1..N into x (bits set) and y, 2 <= N <= 10.
  int mw = 0;
  for (int big_n = 2; big_n <= 10; ++big_n) {
    const unsigned full = (1u << big_n) - 1;
    std::vector<int> u_of(full + 1);
    for (unsigned mask = 0; mask <= full; ++mask) {
      int u = 0;
      for (int i = 0; i < big_n; ++i) {
        if (!(mask >> i & 1)) continue;
        for (int j = 0; j < i; ++j) u += !(mask >> j & 1);
      }
      u_of[mask] = u;
    }
    for (unsigned mask = 1; mask < full; ++mask) {
      const int n = std::popcount(mask);
      double lower = 0, upper = 0, total = 0;
      for (unsigned other = 0; other <= full; ++other) {
        if (std::popcount(other) != n) continue;
        ++total;
        lower += u_of[other] <= u_of[mask];
        upper += u_of[other] >= u_of[mask];
      }
      const double want = std::min(1.0, 2 * std::min(lower, upper) / total);
      std::vector<double> x, y;
      for (int i = 0; i < big_n; ++i) ((mask >> i & 1) ? x : y).push_back(i + 1.0);
      const auto r = eval::mann_whitney_u(x, y);
      ++mw;
      p.check(r.exact, "mann-whitney n={} m={} not exact", x.size(), y.size());
      p.check(std::abs(r.p - want) <= 1e-12, "mann-whitney mask {:b}/{} p={} want {}", mask, big_n, r.p, want);
      p.check(r.u_x == u_of[mask], "mann-whitney U {} want {}", r.u_x, u_of[mask]);
    }
  }
  std::vector<double> v(50, 0.0);
  std::fill_n(v.begin(), 44, 1.0);
  const auto ci = eval::bootstrap_ci(v, eval::Statistic::Proportion);
  p.check(std::abs(ci.low * 100 - 78.0) <= 2.0 && std::abs(ci.high * 100 - 96.0) <= 2.0,
          "bootstrap 44/50 CI ({:.1f}, {:.1f})", ci.low * 100, ci.high * 100);
  return fmt::format("{} McNemar pairs, {} Mann-Whitney splits, 44/50 CI ({:.1f}, {:.1f})", mc, mw, ci.low * 100,
                     ci.high * 100);
}

// ---- GRPO ----

// Loss on frozen groups, written out from the definitions.
double grpo_loss(const grpo::TabularPolicy& pol, const grpo::TabularPolicy& ref,
                 const std::vector<grpo::RolloutGroup>& groups, const grpo::GrpoConfig& cfg) {
  auto logp = [](const grpo::Logits& z, double temp, std::size_t a) {
    double mx = -INFINITY;
    for (double v : z) mx = std::max(mx, v / temp);
    double s = 0;
    for (double v : z) s += std::exp(v / temp - mx);
    return z[a] / temp - mx - std::log(s);
  };
  double surr = 0, kl = 0, count = 0;
  for (const auto& g : groups) {
    for (std::size_t i = 0; i < g.actions.size(); ++i) {
      const double lp = logp(pol.logits.at(g.context_id), pol.temperature, g.actions[i]);
      const double lr = logp(ref.logits.at(g.context_id), ref.temperature, g.actions[i]);
      const double ratio = std::exp(lp - g.old_logprobs[i]);
      const double clipped = std::clamp(ratio, 1 - cfg.clip_epsilon, 1 + cfg.clip_epsilon);
      surr += -std::min(ratio * g.advantages[i], clipped * g.advantages[i]);
      kl += std::exp(lr - lp) - 1 - (lr - lp);
      ++count;
    }
  }
  return surr / count + cfg.kl_coeff * kl / count;
}

std::string grpo_math(Problems& p) {
  std::mt19937_64 rng(11);
  double worst_sum = 0;
  for (int g = 0; g < 10000; ++g) {
    std::vector<double> r(2 + rng() % 15);
    for (auto& x : r) x = g % 2 ? std::uniform_real_distribution<double>(-3, 3)(rng) : double(rng() % 2);
    const auto a = grpo::group_advantages(r);
    worst_sum = std::max(worst_sum, std::abs(std::accumulate(a.begin(), a.end(), 0.0)));
  }
  p.check(worst_sum <= 1e-12, "advantage sum {:.3g}", worst_sum);

  const std::vector<grpo::TrainingContext> ctx{{"q1", 'B'}, {"q2", 'D'}, {"q3", 'A'}};
  double worst_rel = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 r(seed);
    std::normal_distribution<double> n(0, 0.7);
    auto random_policy = [&] {
      auto pol = grpo::TabularPolicy::uniform({"q1", "q2", "q3"}, seed % 2 ? 0.8 : 1.0);
      for (auto& [_, z] : pol.logits) {
        for (auto& v : z) v = n(r);
      }
      return pol;
    };
    const auto ref = random_policy();
    auto pol = random_policy();
    grpo::GrpoConfig cfg;
    cfg.kl_coeff = seed % 3 ? 0.01 : 0.3;
    const auto groups = grpo::sample_groups(ref, ctx, cfg, r);
    const auto g = grpo::gradient(pol, ref, groups, cfg);
    const double h = 1e-5;
    for (auto& [id, z] : pol.logits) {
      for (std::size_t k = 0; k < grpo::kActions; ++k) {
        const double keep = z[k];
        z[k] = keep + h;
        const double up = grpo_loss(pol, ref, groups, cfg);
        z[k] = keep - h;
        const double down = grpo_loss(pol, ref, groups, cfg);
        z[k] = keep;
        const double fd = (up - down) / (2 * h);
        const double an = g.at(id)[k];
        if (std::abs(fd) < 1e-8 && std::abs(an) < 1e-8) continue;
        worst_rel = std::max(worst_rel, std::abs(fd - an) / std::max(std::abs(fd), std::abs(an)));
      }
    }
  }
  p.check(worst_rel < 1e-4, "gradient relative error {:.3g}", worst_rel);

  grpo::GrpoConfig cfg;
  p.check(cfg.group_size == 4 && cfg.kl_coeff == 0.01, "defaults group {} kl {}", cfg.group_size, cfg.kl_coeff);
  const auto run = grpo::train(grpo::TabularPolicy::uniform({"bandit"}), {{"bandit", 'B'}}, cfg, 200);
  std::optional<std::size_t> reached;
  for (const auto& m : run.metrics) {
    if (!reached && m.expected_reward >= 0.95) reached = m.step;
  }
  double tail = 0;
  for (std::size_t i = 150; i < 200; ++i) tail += run.metrics[i].mean_reward;
  tail /= 50;
  p.check(reached.has_value(), "bandit never reached 0.95 (final {:.3f})", run.metrics.back().expected_reward);
  p.check(run.metrics.back().expected_reward >= 0.95, "bandit final expected reward {:.3f}",
          run.metrics.back().expected_reward);
  p.check(tail >= 0.95, "bandit sampled reward over the last 50 steps {:.3f}", tail);
  return fmt::format("advantage sums <= {:.1g}, gradient rel. error {:.1g}, bandit >= 0.95 at step {}", worst_sum,
                     worst_rel, reached.value_or(0));
}

// ---- extraction ----

std::string extraction(Problems& p) {
  const std::vector<std::pair<std::string, char>> documented{
      {"The answer is B", 'B'}, {"B. Atrial fibrillation", 'B'}, {"After weighing the options:\nB\n", 'B'}};
  for (const auto& [text, want] : documented) {
    const auto got = eval::extract_choice(text);
    p.check(got == want, "'{}' -> {}", text, got ? std::string(1, *got) : "none");
  }
  const auto cases = json::parse(read_file(fixture("extraction_cases.json")));
  p.check(cases.size() == 100, "fixture has {} cases", cases.size());
  for (const auto& c : cases) {
    const auto got = eval::extract_choice(c.at("response").get<std::string>());
    const auto want = c.at("expected");
    const bool ok = want.is_null() ? !got : (got && std::string(1, *got) == want.get<std::string>());
    p.check(ok, "fixture '{}'", c.at("response").get<std::string>());
  }
  return fmt::format("3 documented formats, {} fixture cases", cases.size());
}

// ---- B-Clean ----

std::string bclean(Problems& p) {
  std::vector<BenchmarkItem> bench;
  std::mt19937_64 rng(3);
  std::vector<int> order(100);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  const std::set<int> leaked(order.begin(), order.begin() + 40);
  eval::ModelRun a{"text-only-a", eval::Condition::ImageAbsent, {}};
  eval::ModelRun b{"text-only-b", eval::Condition::ImageAbsent, {}};
  for (int i = 0; i < 100; ++i) {
    BenchmarkItem item;
    item.id = fmt::format("item-{:03d}", i);
    item.modality_set = {kAllModalities[std::size_t(i % 3)]};
    item.question = fmt::format("Question {}?", i);
    item.format = AnswerFormat::Mcq;
    item.options = {{'A', "one"}, {'B', "two"}, {'C', "three"}, {'D', "four"}};
    item.correct_label = "ABCD"[i % 4];
    item.category = "constructed";
    bench.push_back(item);
    const char wrong = *item.correct_label == 'A' ? 'B' : 'A';
    // leaked items are answered by one of the two runs; the other one misses or skips
    const bool by_a = leaked.count(i) && i % 2;
    const bool by_b = leaked.count(i) && !(i % 2);
    a.outputs[item.id] = fmt::format("The answer is {}", by_a ? *item.correct_label : wrong);
    if (by_b) b.outputs[item.id] = std::string(1, *item.correct_label);
  }
  const auto r = eval::bclean_filter(bench, {a, b});
  p.check(r.retained.size() == 60, "retained {}", r.retained.size());
  std::set<std::string> all;
  for (const auto& id : r.retained) all.insert(id);
  for (const auto& id : r.excluded) {
    p.check(!all.count(id), "{} both retained and excluded", id);
    all.insert(id);
  }
  p.check(all.size() == 100, "partition covers {} items", all.size());
  for (const auto& id : r.excluded) p.check(leaked.count(std::stoi(id.substr(5))) > 0, "{} excluded but not leaked", id);
  p.check(std::is_sorted(r.retained.begin(), r.retained.end()), "retained order is not benchmark order");
  const auto again = eval::bclean_filter(eval::subset(bench, r.retained), {a, b});
  p.check(again.retained == r.retained && again.excluded.empty(), "second pass removed {} more", again.excluded.size());
  return fmt::format("{} of 100 retained, partition and idempotence hold", r.retained.size());
}

// ---- ECG rendering ----

std::string ecg_rendering(Problems& p) {
  using namespace media;
  const auto rec = read_ecg_xml(fixture("ecg_golden.xml"));
  const auto golden = read_file(fixture("ecg_golden.ppm"));
  p.check(encode_ppm(render_ecg_grid(rec, 360, 320).image) == golden, "golden bytes differ");

  // 1 mV pulse in lead I from 2 s to 4 s; height and major grid pitch measured
  // on the raster at two sizes
  EcgRecording pulse;
  pulse.sample_rate = 250;
  for (auto& lead : pulse.leads) lead.assign(2500, 0.0);
  for (std::size_t i = 500; i < 1000; ++i) pulse.leads[0][i] = 1.0;
  auto measure = [&](int w, int h) {
    const auto g = render_ecg_grid(pulse, w, h);
    const auto& c = g.calibration;
    const int x = 3 * c.cell_width / 10;  // 3 s: on the plateau
    int top = -1;
    for (int y = 0; y < c.cell_height && top < 0; ++y) {
      if (g.image.at(x, y) == kTrace) top = y;
    }
    std::vector<int> majors;
    for (int y = 0; y < c.cell_height; ++y) {
      if (g.image.at(c.cell_width + 1, y) == kMajorGrid) majors.push_back(y);
    }
    return std::pair<int, int>{c.cell_height / 2 - top, majors.size() > 1 ? majors[1] - majors[0] : -1};
  };
  const auto [a1, s1] = measure(360, 320);
  const auto [a2, s2] = measure(720, 640);
  p.check(std::abs(a2 - 2 * a1) <= 1, "pulse {} px at 1x, {} px at 2x", a1, a2);
  p.check(std::abs(s2 - 2 * s1) <= 1, "major grid {} px at 1x, {} px at 2x", s1, s2);
  p.check(a1 == 2 * s1, "1 mV pulse spans {} px, two major boxes are {} px", a1, 2 * s1);

  Image img(224, 224);
  for (int y = 0; y < 224; ++y) {
    for (int x = 0; x < 224; ++x) img.set(x, y, {std::uint8_t(x), std::uint8_t(y), std::uint8_t(x * 7 + y)});
  }
  const auto seq = patchify(img);
  p.check(seq.patches.size() == 196, "{} patches", seq.patches.size());
  p.check(reassemble(seq) == std::vector<Image>{img}, "reassembly differs");
  return fmt::format("golden match, pulse {}->{} px, grid {}->{} px, 196 patches", a1, a2, s1, s2);
}

// ---- sequence routing ----

std::string sequence_routing(Problems& p) {
  using namespace media;
  const auto m = read_manifest(data("samples/cmr_manifest.json"));
  p.check(m.series.size() == 6, "manifest has {} series", m.series.size());
  auto expect = [&](Intent intent, const std::function<bool(const Series&)>& want) {
    std::vector<std::string> expected, got;
    for (const auto& s : m.series) {
      if (want(s)) expected.push_back(s.series_id);
    }
    for (const auto& s : select_sequences(m, intent).series) got.push_back(s.series_id);
    p.check(!expected.empty() && got == expected, "{}: got [{}] want [{}]", to_string(intent), fmt::join(got, ","),
            fmt::join(expected, ","));
    return fmt::format("{}", fmt::join(got, "+"));
  };
  const auto f = expect(Intent::Fibrosis, [](const Series& s) { return s.kind == SequenceKind::Lge; });
  const auto c = expect(Intent::Function, [](const Series& s) { return s.kind == SequenceKind::Cine; });
  const auto v = expect(Intent::Volumetry,
                        [](const Series& s) { return s.kind == SequenceKind::Cine && s.plane == Plane::ShortAxis; });
  return fmt::format("fibrosis {}, function {}, volumetry {}", f, c, v);
}

// ---- service ----

std::string service_e2e(Problems& p) {
  const auto tmp = fs::temp_directory_path() / fmt::format("cardio-acceptance-{}", std::random_device{}());
  auto cfg = service::load_config(data("config.yaml"), [](const std::string&) { return std::nullopt; });
  cfg.data_dir = tmp.string();
  cfg.host = "127.0.0.1";
  for (const auto& [m, spec] : cfg.backends) {
    p.check(spec.kind != gateway::BackendKind::Remote, "{} backend is remote", to_string(m));
  }
  std::string summary;
  {
    service::Service svc(cfg);
    httplib::Client cli("127.0.0.1", svc.listen_background());
    cli.set_read_timeout(60, 0);
    auto post = [&](const std::string& path, const json& body) {
      auto r = cli.Post(path, body.dump(), "application/json");
      if (!r) throw std::runtime_error(fmt::format("POST {} failed", path));
      return std::pair{r->status, json::parse(r->body)};
    };
    const auto [created_status, created] = post("/sessions", json::object());
    p.check(created_status == 201, "create session: {}", created_status);
    const auto id = created.at("id").get<std::string>();
    const std::vector<std::tuple<std::string, std::string, std::string>> media{
        {"ecg", "samples/ecg_sample.xml", "signal-xml"},
        {"echo", "samples/echo_sample.ppm", "image"},
        {"cmr", "samples/cmr_manifest.json", "study-manifest"}};
    for (const auto& [m, rel, kind] : media) {
      const auto [st, _] = post("/sessions/" + id + "/media", {{"modality", m}, {"uri", data(rel)}, {"kind", kind}});
      p.check(st == 200, "attach {}: {}", m, st);
    }
    const auto [st, r] = post("/sessions/" + id + "/turns", {{"text", "Does this patient have cardiac amyloidosis?"}});
    p.check(st == 200, "turn: {}", st);
    double sum = 0;
    for (const auto& [_, w] : r.at("weights").items()) sum += w.get<double>();
    p.check(std::abs(sum - 1.0) <= 1e-9, "weights sum to {:.17g}", sum);

    const auto& trace = r.at("trace");
    std::map<std::string, std::set<std::string>> roles;
    for (std::size_t i = 0; i < trace.size(); ++i) {
      p.check(trace[i].at("seq") == i, "trace seq {} at {}", trace[i].at("seq").dump(), i);
      if (trace[i].at("kind") == "probe") {
        const bool fresh = roles[trace[i].at("modality").get<std::string>()].insert(trace[i].at("probe_role").get<std::string>()).second;
        p.check(fresh, "duplicate probe {}", trace[i].dump());
      }
    }
    p.check(!trace.empty() && trace.front().at("kind") == "decompose" && trace.back().at("kind") == "final",
            "trace does not run decompose..final");
    p.check(r.at("findings").size() == 3, "{} findings", r.at("findings").size());
    for (const auto& f : r.at("findings")) {
      const auto m = f.at("modality").get<std::string>();
      p.check(roles[m].size() == 4, "{} has {} probe roles", m, roles[m].size());
      p.check(r.at("weights").contains(m), "{} finding has no weight", m);
    }
    summary = fmt::format("{} findings, weight sum {:.12f}, {} trace events", r.at("findings").size(), sum, trace.size());
    svc.stop();
  }
  std::error_code ec;
  fs::remove_all(tmp, ec);
  return summary;
}

}  // namespace

int main() {
  spdlog::set_level(spdlog::level::warn);
  const std::vector<Criterion> criteria{
      {"mirage-protocol", 30, mirage_protocol},
      {"threshold-semantics", 0, threshold_semantics},
      {"statistics-oracles", 120, statistics},
      {"grpo-math", 60, grpo_math},
      {"extraction-cascade", 0, extraction},
      {"bclean", 0, bclean},
      {"ecg-rendering", 0, ecg_rendering},
      {"sequence-routing", 0, sequence_routing},
      {"service-e2e", 0, service_e2e},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    Problems p;
    std::string summary;
    const auto start = std::chrono::steady_clock::now();
    try {
      summary = c.run(p);
    } catch (const std::exception& e) {
      p.add(fmt::format("exception: {}", e.what()));
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (c.limit_s > 0 && secs > c.limit_s) p.add(fmt::format("took {:.1f} s, limit {:.0f} s", secs, c.limit_s));
    const bool ok = p.empty();
    failures += !ok;
    std::cout << fmt::format("{} {:<20} {:6.2f}s  {}\n", ok ? "PASS" : "FAIL", c.name, secs, ok ? summary : p.str())
              << std::flush;
  }
  return failures;
}
