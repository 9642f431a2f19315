#pragma once

// Template-driven benchmark generation from structured report records.

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "cardio/domain.hpp"
#include "cardio/mirage.hpp"

namespace cardio::benchgen {

/// A bank entry matches a categorical value by case-insensitive text or a
/// numeric value by the half-open range [min, max).
struct BankEntry {
  std::string text;
  std::optional<double> min;
  std::optional<double> max;
};

struct QuestionTemplate {
  std::string id;
  Modality modality = Modality::Ecg;
  std::string category;
  AnswerFormat format = AnswerFormat::Mcq;
  std::string question;  // may hold {field.path} slots
  std::string answer_slot;
  std::string subject;
  std::vector<BankEntry> bank;

  static QuestionTemplate from_json(const nlohmann::json& j);
};

using FieldValue = std::variant<std::string, double>;

struct ReportRecord {
  std::string study_id;
  Modality modality = Modality::Ecg;
  std::map<std::string, FieldValue> findings;
  std::string narrative;
  std::vector<MediaRef> media;

  static ReportRecord from_json(const nlohmann::json& j);
};

std::vector<QuestionTemplate> load_templates(const std::string& path);
std::vector<ReportRecord> load_records(const std::string& path);

class GenerationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Deterministic 64-bit seed for an item: FNV-1a of the id mixed with `seed`.
std::uint64_t item_seed(std::uint64_t seed, std::string_view item_id);

/// Item id is "<template id>:<study id>". Throws GenerationError naming the
/// slot when a slot is missing or the answer matches no bank entry.
BenchmarkItem instantiate(const QuestionTemplate& tmpl, const ReportRecord& record, std::uint64_t seed = 42,
                          const mirage::RephraseTemplates& rephrase = {});

/// Replaces the option text at `which`; the label keeps its role.
BenchmarkItem swap_none_option(BenchmarkItem item, char which);

struct GenerationConfig {
  std::uint64_t seed = 42;
  double none_fraction = 0.2;
};

struct DatasetStats {
  std::size_t total = 0;
  std::size_t mcq = 0;
  std::size_t open = 0;
  std::size_t none_option = 0;
  std::size_t skipped = 0;  // template x record pairs whose slots did not resolve
  std::map<std::string, std::size_t> per_category;
  std::map<std::string, std::size_t> per_modality;
};

struct Dataset {
  std::vector<BenchmarkItem> items;  // ordered by id
  DatasetStats stats;
};

Dataset generate_dataset(const std::vector<QuestionTemplate>& templates, const std::vector<ReportRecord>& records,
                         const GenerationConfig& cfg = {});

nlohmann::json to_json(const DatasetStats& stats);

}  // namespace cardio::benchgen
