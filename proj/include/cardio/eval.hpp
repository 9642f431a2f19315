#pragma once

// Benchmark scoring: answer extraction, accuracy with bootstrap intervals,
// paired and rank tests, Likert aggregation, leakage filtering, failure
// classification and report emission.

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "cardio/domain.hpp"
#include "cardio/gateway.hpp"

namespace cardio::eval {

/// Letter A-E from a free-text answer. Patterns, first that matches wins:
///  1. "the answer is X" anywhere (case-insensitive phrase, last occurrence)
///  2. response starts with "X." or "X)" followed by option text
///  3. a line holding only the letter, e.g. "C", "(C)", "C." (last such line)
std::optional<char> extract_choice(std::string_view response);

enum class Condition { ImagePresent, ImageAbsent };

std::string_view to_string(Condition c);
Condition condition_from_string(std::string_view text);

struct ModelRun {
  std::string model_id;
  Condition condition = Condition::ImagePresent;
  std::map<std::string, std::string> outputs;  // item id -> response
};

/// JSON-Lines run file of {item_id, response, condition[, model]}. The model id
/// defaults to the file stem. Mixed conditions in one file are rejected.
ModelRun read_run(const std::string& path);
void write_run(const std::string& path, const ModelRun& run);

class EvalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct McqScore {
  std::vector<std::pair<std::string, bool>> correctness;  // ordered by item id
  std::size_t correct = 0;
  std::size_t n = 0;          // MCQ items of the benchmark; missing outputs count as wrong
  std::size_t responded = 0;  // items with an output in the run
  double accuracy = 0.0;
};

/// Throws EvalError when the run shares no MCQ item with the benchmark.
McqScore score_mcq(const ModelRun& run, const std::vector<BenchmarkItem>& bench);

enum class Statistic { Mean, Proportion, Median };

struct Interval {
  double low = 0.0;
  double high = 0.0;
};

/// Percentile bootstrap. Resample indices come from std::mt19937_64 seeded
/// with `seed`: u = (next() >> 11) * 2^-53, index = floor(u * n). Percentiles
/// use linear interpolation between order statistics.
Interval bootstrap_ci(const std::vector<double>& values, Statistic statistic, std::size_t resamples = 5000,
                      std::uint64_t seed = 42, double level = 0.95);

double mean(const std::vector<double>& v);
double median(std::vector<double> v);

/// Two-sided McNemar p. Exact binomial when b + c < 25, otherwise the
/// continuity-corrected chi-square. b + c = 0 gives 1.
double mcnemar(std::uint64_t b, std::uint64_t c);

enum class MwMethod { Auto, Exact, Normal };

struct MannWhitney {
  double u_x = 0.0;
  double u_y = 0.0;
  double p = 1.0;
  bool exact = false;
};

/// Auto uses enumeration when |x|+|y| <= 16 and there are no ties. Exact on
/// tied data throws std::invalid_argument.
MannWhitney mann_whitney_u(const std::vector<double>& x, const std::vector<double>& y, MwMethod method = MwMethod::Auto);

struct LikertStats {
  std::size_t n = 0;
  double mean = 0.0;
  double median = 0.0;
  Interval mean_ci;
  Interval median_ci;
};

LikertStats likert_stats(const std::vector<LikertScore>& scores, std::uint64_t seed = 42);

struct BcleanResult {
  std::vector<std::string> retained;
  std::vector<std::string> excluded;
};

/// Excludes items any image-absent run answered correctly. Open items are
/// always retained (no correctness without a judge).
BcleanResult bclean_filter(const std::vector<BenchmarkItem>& bench, const std::vector<ModelRun>& image_absent_runs);

/// Benchmark restricted to `ids`, preserving order.
std::vector<BenchmarkItem> subset(const std::vector<BenchmarkItem>& bench, const std::vector<std::string>& ids);

inline constexpr std::array<std::string_view, 4> kFailureCategories{
    "visual-misinterpretation", "reasoning-synthesis", "modality-confusion", "hallucination-fabrication"};
inline constexpr std::string_view kUnclassified = "other-unclassified";

struct FailureKeywords {
  std::vector<std::pair<std::string, std::vector<std::string>>> categories;  // fixed order

  static FailureKeywords from_json(const nlohmann::json& j);
  static FailureKeywords load(const std::string& path);
};

std::string classify_failure(std::string_view response, std::string_view explanation, const FailureKeywords& keywords);

/// Rows: truth A-E. Columns: predicted A-E, then extraction failure.
struct ConfusionMatrix {
  std::array<std::array<std::uint64_t, 6>, 5> counts{};
  std::array<std::array<double, 6>, 5> normalized{};
};

ConfusionMatrix confusion_matrix(const ModelRun& run, const std::vector<BenchmarkItem>& bench);

struct FailureEntry {
  std::string model_id;
  std::string item_id;
  std::string kind;  // mcq-wrong | vqa-low
  std::string error_type;
  std::string response;
  std::string explanation;
};

using LikertMap = std::map<std::string, std::map<std::string, LikertScore>>;  // model -> item -> score

std::vector<FailureEntry> failure_log(const std::vector<ModelRun>& runs, const std::vector<BenchmarkItem>& bench,
                                      const LikertMap& likert, const FailureKeywords& keywords);

// ---- reports ----

struct AccuracyRow {
  std::string model_id;
  std::string group;  // modality group
  std::size_t n = 0;
  std::size_t correct = 0;
  double accuracy = 0.0;
  Interval ci;
};

struct PairwiseRow {
  std::string group;
  std::string model_a;
  std::string model_b;
  std::uint64_t b = 0;  // only model_a correct
  std::uint64_t c = 0;  // only model_b correct
  double p = 1.0;
};

struct LikertRow {
  std::string model_id;
  std::string group;
  LikertStats stats;
};

struct LikertPairRow {
  std::string group;
  std::string model_a;
  std::string model_b;
  double u = 0.0;
  double p = 1.0;
};

struct CategoryRow {
  std::string model_id;
  std::string category;
  std::size_t n = 0;
  std::size_t correct = 0;
  double accuracy = 0.0;
};

struct EvalReport {
  std::vector<AccuracyRow> accuracy;
  std::vector<PairwiseRow> pairwise;
  std::vector<LikertRow> likert;
  std::vector<LikertPairRow> likert_pairwise;
  std::vector<CategoryRow> categories;
  std::map<std::string, ConfusionMatrix> confusion;  // per model
  std::vector<FailureEntry> failures;
  std::optional<BcleanResult> bclean;
};

struct EvalInputs {
  std::vector<BenchmarkItem> bench;
  std::vector<ModelRun> runs;         // image-present
  std::vector<ModelRun> absent_runs;  // image-absent, used by B-Clean
  LikertMap likert;
  bool apply_bclean = false;
  std::uint64_t seed = 42;
  std::size_t resamples = 5000;
};

EvalReport build_report(const EvalInputs& inputs, const FailureKeywords& keywords);

nlohmann::json to_json(const EvalReport& report);

/// Writes report.json plus accuracy.csv, pairwise.csv, likert.csv,
/// likert_pairwise.csv, categories.csv, confusion_<model>.csv and
/// failures.csv into `dir`.
void write_report(const std::string& dir, const EvalReport& report);

/// Likert grading by a remote model through the expert gateway.
class RemoteLikertJudge {
 public:
  explicit RemoteLikertJudge(gateway::BackendPtr backend);
  LikertScore judge(std::string_view question, std::string_view reference, std::string_view response) const;

 private:
  gateway::BackendPtr backend_;
};

/// Reads "Score: N" (1-5) and an optional "Explanation:" from a judge reply.
LikertScore parse_judgement(std::string_view reply);

}  // namespace cardio::eval
