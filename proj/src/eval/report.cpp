#include <algorithm>
#include <filesystem>

#include <fmt/format.h>

#include "cardio/eval.hpp"

namespace cardio::eval {

using nlohmann::json;

namespace {

std::string csv_field(std::string_view s) {
  if (s.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

std::vector<double> as_values(const McqScore& s) {
  std::vector<double> v;
  for (const auto& [_, ok] : s.correctness) v.push_back(ok ? 1.0 : 0.0);
  return v;
}

std::vector<BenchmarkItem> in_group(const std::vector<BenchmarkItem>& bench, const std::string& group) {
  std::vector<BenchmarkItem> out;
  for (const auto& item : bench) {
    if (group == "all" || modality_group(item) == group) out.push_back(item);
  }
  return out;
}

std::vector<std::string> groups_of(const std::vector<BenchmarkItem>& bench) {
  std::set<std::string> gs;
  for (const auto& item : bench) gs.insert(modality_group(item));
  std::vector<std::string> out(gs.begin(), gs.end());
  out.push_back("all");
  return out;
}

std::optional<McqScore> try_score(const ModelRun& run, const std::vector<BenchmarkItem>& bench) {
  try {
    return score_mcq(run, bench);
  } catch (const EvalError&) {
    return std::nullopt;
  }
}

}  // namespace

EvalReport build_report(const EvalInputs& in, const FailureKeywords& keywords) {
  EvalReport report;
  std::vector<BenchmarkItem> bench = in.bench;
  if (in.apply_bclean) {
    report.bclean = bclean_filter(in.bench, in.absent_runs);
    bench = subset(in.bench, report.bclean->retained);
  }
  auto runs = in.runs;
  for (const auto& r : runs) {
    if (r.condition != Condition::ImagePresent) {
      throw EvalError(fmt::format("run '{}' must be image-present to be scored", r.model_id));
    }
  }
  std::sort(runs.begin(), runs.end(), [](const auto& a, const auto& b) { return a.model_id < b.model_id; });

  for (const auto& group : groups_of(bench)) {
    const auto items = in_group(bench, group);
    std::map<std::string, McqScore> scores;
    for (const auto& run : runs) {
      auto s = try_score(run, items);
      if (!s) continue;
      report.accuracy.push_back({run.model_id, group, s->n, s->correct, s->accuracy,
                                 bootstrap_ci(as_values(*s), Statistic::Proportion, in.resamples, in.seed)});
      scores.emplace(run.model_id, std::move(*s));
    }
    for (auto a = scores.begin(); a != scores.end(); ++a) {
      for (auto b = std::next(a); b != scores.end(); ++b) {
        PairwiseRow row{group, a->first, b->first};
        for (std::size_t i = 0; i < a->second.correctness.size(); ++i) {
          const bool ca = a->second.correctness[i].second;
          const bool cb = b->second.correctness[i].second;
          if (ca && !cb) ++row.b;
          if (cb && !ca) ++row.c;
        }
        row.p = mcnemar(row.b, row.c);
        report.pairwise.push_back(row);
      }
    }

    std::map<std::string, std::vector<LikertScore>> per_model;
    std::set<std::string> ids;
    for (const auto& item : items) ids.insert(item.id);
    for (const auto& [model, scored] : in.likert) {
      for (const auto& [item_id, score] : scored) {
        if (ids.count(item_id)) per_model[model].push_back(score);
      }
    }
    for (const auto& [model, scores_l] : per_model) {
      if (scores_l.empty()) continue;
      report.likert.push_back({model, group, likert_stats(scores_l, in.seed)});
    }
    for (auto a = per_model.begin(); a != per_model.end(); ++a) {
      for (auto b = std::next(a); b != per_model.end(); ++b) {
        std::vector<double> x;
        std::vector<double> y;
        for (const auto& s : a->second) x.push_back(s.value);
        for (const auto& s : b->second) y.push_back(s.value);
        if (x.empty() || y.empty()) continue;
        const auto mw = mann_whitney_u(x, y);
        report.likert_pairwise.push_back({group, a->first, b->first, mw.u_x, mw.p});
      }
    }
  }

  std::set<std::string> categories;
  for (const auto& item : bench) categories.insert(item.category);
  for (const auto& run : runs) {
    for (const auto& cat : categories) {
      std::vector<BenchmarkItem> items;
      for (const auto& item : bench) {
        if (item.category == cat) items.push_back(item);
      }
      auto s = try_score(run, items);
      if (!s) continue;
      report.categories.push_back({run.model_id, cat, s->n, s->correct, s->accuracy});
    }
    report.confusion[run.model_id] = confusion_matrix(run, bench);
  }
  report.failures = failure_log(runs, bench, in.likert, keywords);
  return report;
}

namespace {

json interval_json(const Interval& i) { return json{{"low", i.low}, {"high", i.high}}; }

}  // namespace

json to_json(const EvalReport& r) {
  json j;
  j["accuracy"] = json::array();
  for (const auto& a : r.accuracy) {
    j["accuracy"].push_back({{"model", a.model_id}, {"modality", a.group}, {"n", a.n}, {"correct", a.correct},
                             {"accuracy", a.accuracy}, {"ci", interval_json(a.ci)}});
  }
  j["pairwise"] = json::array();
  for (const auto& p : r.pairwise) {
    j["pairwise"].push_back({{"modality", p.group}, {"model_a", p.model_a}, {"model_b", p.model_b},
                             {"only_a_correct", p.b}, {"only_b_correct", p.c}, {"p_value", p.p}});
  }
  j["likert"] = json::array();
  for (const auto& l : r.likert) {
    j["likert"].push_back({{"model", l.model_id}, {"modality", l.group}, {"n", l.stats.n}, {"mean", l.stats.mean},
                           {"mean_ci", interval_json(l.stats.mean_ci)}, {"median", l.stats.median},
                           {"median_ci", interval_json(l.stats.median_ci)}});
  }
  j["likert_pairwise"] = json::array();
  for (const auto& l : r.likert_pairwise) {
    j["likert_pairwise"].push_back(
        {{"modality", l.group}, {"model_a", l.model_a}, {"model_b", l.model_b}, {"u", l.u}, {"p_value", l.p}});
  }
  j["categories"] = json::array();
  for (const auto& c : r.categories) {
    j["categories"].push_back({{"model", c.model_id}, {"category", c.category}, {"n", c.n}, {"correct", c.correct},
                               {"accuracy", c.accuracy}});
  }
  j["confusion"] = json::object();
  for (const auto& [model, m] : r.confusion) {
    j["confusion"][model] = {{"labels", {"A", "B", "C", "D", "E"}},
                             {"columns", {"A", "B", "C", "D", "E", "none"}},
                             {"counts", m.counts},
                             {"normalized", m.normalized}};
  }
  j["failures"] = json::array();
  for (const auto& f : r.failures) {
    j["failures"].push_back({{"model", f.model_id}, {"item_id", f.item_id}, {"kind", f.kind},
                             {"error_type", f.error_type}, {"response", f.response}, {"explanation", f.explanation}});
  }
  if (r.bclean) {
    j["bclean"] = {{"retained", r.bclean->retained}, {"excluded", r.bclean->excluded}};
  } else {
    j["bclean"] = nullptr;
  }
  return j;
}

void write_report(const std::string& dir, const EvalReport& r) {
  std::filesystem::create_directories(dir);
  const auto path = [&](const std::string& name) { return (std::filesystem::path(dir) / name).string(); };
  write_file_atomic(path("report.json"), to_json(r).dump(2) + "\n");

  std::string acc = "modality,model,n,correct,accuracy_pct,ci_low_pct,ci_high_pct\n";
  for (const auto& a : r.accuracy) {
    acc += fmt::format("{},{},{},{},{:.1f},{:.1f},{:.1f}\n", csv_field(a.group), csv_field(a.model_id), a.n, a.correct,
                       100.0 * a.accuracy, 100.0 * a.ci.low, 100.0 * a.ci.high);
  }
  write_file_atomic(path("accuracy.csv"), acc);

  std::string pw = "modality,model_a,model_b,only_a_correct,only_b_correct,p_value\n";
  for (const auto& p : r.pairwise) {
    pw += fmt::format("{},{},{},{},{},{:.6g}\n", csv_field(p.group), csv_field(p.model_a), csv_field(p.model_b), p.b,
                      p.c, p.p);
  }
  write_file_atomic(path("pairwise.csv"), pw);

  std::string lk = "modality,model,n,mean,mean_ci_low,mean_ci_high,median,median_ci_low,median_ci_high\n";
  for (const auto& l : r.likert) {
    lk += fmt::format("{},{},{},{:.2f},{:.2f},{:.2f},{:.1f},{:.1f},{:.1f}\n", csv_field(l.group), csv_field(l.model_id),
                      l.stats.n, l.stats.mean, l.stats.mean_ci.low, l.stats.mean_ci.high, l.stats.median,
                      l.stats.median_ci.low, l.stats.median_ci.high);
  }
  write_file_atomic(path("likert.csv"), lk);

  std::string lp = "modality,model_a,model_b,u,p_value\n";
  for (const auto& l : r.likert_pairwise) {
    lp += fmt::format("{},{},{},{},{:.6g}\n", csv_field(l.group), csv_field(l.model_a), csv_field(l.model_b), l.u, l.p);
  }
  write_file_atomic(path("likert_pairwise.csv"), lp);

  std::string cat = "model,category,n,correct,accuracy_pct\n";
  for (const auto& c : r.categories) {
    cat += fmt::format("{},{},{},{},{:.1f}\n", csv_field(c.model_id), csv_field(c.category), c.n, c.correct,
                       100.0 * c.accuracy);
  }
  write_file_atomic(path("categories.csv"), cat);

  for (const auto& [model, m] : r.confusion) {
    std::string cm = "truth,A,B,C,D,E,none,A_norm,B_norm,C_norm,D_norm,E_norm,none_norm\n";
    for (std::size_t row = 0; row < 5; ++row) {
      cm += static_cast<char>('A' + row);
      for (auto v : m.counts[row]) cm += fmt::format(",{}", v);
      for (auto v : m.normalized[row]) cm += fmt::format(",{:.6f}", v);
      cm += '\n';
    }
    write_file_atomic(path(fmt::format("confusion_{}.csv", model)), cm);
  }

  std::string fl = "model,item_id,kind,error_type,response,explanation\n";
  for (const auto& f : r.failures) {
    fl += fmt::format("{},{},{},{},{},{}\n", csv_field(f.model_id), csv_field(f.item_id), f.kind, f.error_type,
                      csv_field(f.response), csv_field(f.explanation));
  }
  write_file_atomic(path("failures.csv"), fl);
}

}  // namespace cardio::eval
