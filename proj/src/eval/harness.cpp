#include <algorithm>
#include <filesystem>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "cardio/eval.hpp"

namespace cardio::eval {

using nlohmann::json;

std::string_view to_string(Condition c) { return c == Condition::ImagePresent ? "image-present" : "image-absent"; }

Condition condition_from_string(std::string_view text) {
  if (text == "image-present") return Condition::ImagePresent;
  if (text == "image-absent") return Condition::ImageAbsent;
  throw std::invalid_argument(fmt::format("unknown condition '{}'", text));
}

ModelRun read_run(const std::string& path) {
  ModelRun run;
  run.model_id = std::filesystem::path(path).stem().string();
  std::optional<Condition> condition;
  std::size_t line = 0;
  for (const auto& j : read_json_lines(path)) {
    ++line;
    try {
      const auto c = condition_from_string(j.at("condition").get<std::string>());
      if (condition && *condition != c) throw std::invalid_argument("mixed conditions in one run file");
      condition = c;
      if (j.contains("model")) run.model_id = j["model"].get<std::string>();
      run.outputs[j.at("item_id").get<std::string>()] = j.at("response").get<std::string>();
    } catch (const std::exception& e) {
      throw JsonLinesError(path, line, e.what());
    }
  }
  if (condition) run.condition = *condition;
  return run;
}

void write_run(const std::string& path, const ModelRun& run) {
  std::string out;
  for (const auto& [id, response] : run.outputs) {
    out += json{{"item_id", id}, {"response", response}, {"condition", to_string(run.condition)},
                {"model", run.model_id}}
               .dump();
    out += '\n';
  }
  write_file_atomic(path, out);
}

namespace {

std::vector<const BenchmarkItem*> mcq_items(const std::vector<BenchmarkItem>& bench) {
  std::vector<const BenchmarkItem*> out;
  for (const auto& item : bench) {
    if (item.format == AnswerFormat::Mcq && item.correct_label) out.push_back(&item);
  }
  std::sort(out.begin(), out.end(), [](const auto* a, const auto* b) { return a->id < b->id; });
  return out;
}

std::optional<char> prediction(const ModelRun& run, const std::string& id) {
  auto it = run.outputs.find(id);
  if (it == run.outputs.end()) return std::nullopt;
  return extract_choice(it->second);
}

}  // namespace

McqScore score_mcq(const ModelRun& run, const std::vector<BenchmarkItem>& bench) {
  McqScore out;
  for (const auto* item : mcq_items(bench)) {
    const bool has_output = run.outputs.count(item->id) > 0;
    if (has_output) ++out.responded;
    const auto pred = prediction(run, item->id);
    const bool ok = pred && *pred == *item->correct_label;
    out.correctness.emplace_back(item->id, ok);
    out.correct += ok ? 1 : 0;
  }
  out.n = out.correctness.size();
  if (out.responded == 0) {
    throw EvalError(fmt::format("run '{}' covers no multiple-choice item of the benchmark", run.model_id));
  }
  out.accuracy = static_cast<double>(out.correct) / static_cast<double>(out.n);
  return out;
}

BcleanResult bclean_filter(const std::vector<BenchmarkItem>& bench, const std::vector<ModelRun>& image_absent_runs) {
  for (const auto& run : image_absent_runs) {
    if (run.condition != Condition::ImageAbsent) {
      throw EvalError(fmt::format("bclean: run '{}' is not an image-absent run", run.model_id));
    }
  }
  BcleanResult out;
  for (const auto& item : bench) {
    bool leaked = false;
    if (item.format == AnswerFormat::Mcq && item.correct_label) {
      for (const auto& run : image_absent_runs) {
        const auto pred = prediction(run, item.id);
        if (pred && *pred == *item.correct_label) {
          leaked = true;
          break;
        }
      }
    }
    (leaked ? out.excluded : out.retained).push_back(item.id);
  }
  if (out.retained.empty() && !bench.empty()) {
    spdlog::warn("bclean: every item was answered correctly without image access; nothing retained");
  }
  return out;
}

std::vector<BenchmarkItem> subset(const std::vector<BenchmarkItem>& bench, const std::vector<std::string>& ids) {
  const std::set<std::string> keep(ids.begin(), ids.end());
  std::vector<BenchmarkItem> out;
  for (const auto& item : bench) {
    if (keep.count(item.id)) out.push_back(item);
  }
  return out;
}

FailureKeywords FailureKeywords::from_json(const json& j) {
  FailureKeywords out;
  for (auto name : kFailureCategories) {
    std::vector<std::string> words;
    for (const auto& w : j.at(std::string(name))) {
      auto s = w.get<std::string>();
      std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
      if (!s.empty()) words.push_back(std::move(s));
    }
    out.categories.emplace_back(std::string(name), std::move(words));
  }
  return out;
}

FailureKeywords FailureKeywords::load(const std::string& path) {
  try {
    return from_json(json::parse(read_file(path)));
  } catch (const json::exception& e) {
    throw std::invalid_argument(fmt::format("failure keywords '{}': {}", path, e.what()));
  }
}

std::string classify_failure(std::string_view response, std::string_view explanation,
                             const FailureKeywords& keywords) {
  std::string text = fmt::format("{} {}", response, explanation);
  std::transform(text.begin(), text.end(), text.begin(), [](unsigned char c) { return std::tolower(c); });
  for (const auto& [category, words] : keywords.categories) {
    for (const auto& w : words) {
      if (text.find(w) != std::string::npos) return category;
    }
  }
  return std::string(kUnclassified);
}

ConfusionMatrix confusion_matrix(const ModelRun& run, const std::vector<BenchmarkItem>& bench) {
  ConfusionMatrix out;
  for (const auto* item : mcq_items(bench)) {
    const auto truth = static_cast<std::size_t>(*item->correct_label - 'A');
    if (truth >= 5) continue;
    const auto pred = prediction(run, item->id);
    const std::size_t col = pred ? static_cast<std::size_t>(*pred - 'A') : 5;
    ++out.counts[truth][col];
  }
  for (std::size_t r = 0; r < 5; ++r) {
    std::uint64_t total = 0;
    for (auto v : out.counts[r]) total += v;
    if (total == 0) continue;
    for (std::size_t c = 0; c < 6; ++c) {
      out.normalized[r][c] = static_cast<double>(out.counts[r][c]) / static_cast<double>(total);
    }
  }
  return out;
}

std::vector<FailureEntry> failure_log(const std::vector<ModelRun>& runs, const std::vector<BenchmarkItem>& bench,
                                      const LikertMap& likert, const FailureKeywords& keywords) {
  std::vector<FailureEntry> out;
  for (const auto& run : runs) {
    for (const auto* item : mcq_items(bench)) {
      auto it = run.outputs.find(item->id);
      if (it == run.outputs.end()) continue;
      const auto pred = extract_choice(it->second);
      if (pred && *pred == *item->correct_label) continue;
      out.push_back({run.model_id, item->id, "mcq-wrong", classify_failure(it->second, "", keywords), it->second, ""});
    }
    auto lk = likert.find(run.model_id);
    if (lk == likert.end()) continue;
    for (const auto& [item_id, score] : lk->second) {
      if (score.value > 2) continue;
      auto it = run.outputs.find(item_id);
      const std::string response = it == run.outputs.end() ? "" : it->second;
      out.push_back({run.model_id, item_id, "vqa-low", classify_failure(response, score.explanation, keywords),
                     response, score.explanation});
    }
  }
  // Likert entries for models without a run still count.
  for (const auto& [model, items] : likert) {
    const bool has_run =
        std::any_of(runs.begin(), runs.end(), [&](const ModelRun& r) { return r.model_id == model; });
    if (has_run) continue;
    for (const auto& [item_id, score] : items) {
      if (score.value > 2) continue;
      out.push_back({model, item_id, "vqa-low", classify_failure("", score.explanation, keywords), "",
                     score.explanation});
    }
  }
  std::sort(out.begin(), out.end(), [](const FailureEntry& a, const FailureEntry& b) {
    return std::tie(a.model_id, a.item_id, a.kind) < std::tie(b.model_id, b.item_id, b.kind);
  });
  return out;
}

}  // namespace cardio::eval
