#pragma once

// Counterfactual verification of expert answers: three rephrased probes with
// the media attached, one probe without it, and Jaccard-based scoring of how
// much the answers depend on the media.

#include <array>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "cardio/domain.hpp"

namespace cardio::mirage {

/// Templates with {question}, {subject} and {modality} placeholders.
struct RephraseTemplates {
  std::string direct = "{question}";
  std::string descriptive = "Please describe {subject} as seen in the provided {modality} data.";
  std::string imperative = "Based on the {modality} provided, answer the following: {question}";
};

struct MirageConfig {
  double threshold = 0.85;  // flag when image-absent similarity is strictly above
  RephraseTemplates templates;
};

/// Direct, descriptive and imperative forms of `question`. An empty subject
/// falls back to the question text. Throws std::invalid_argument on an empty
/// question.
std::array<std::string, 3> rephrase(std::string_view question, std::string_view subject, Modality modality,
                                    const RephraseTemplates& templates = {});

using TokenSet = std::set<std::string>;

/// Lower-cased, punctuation-separated, whitespace-split token set.
TokenSet tokenize(std::string_view text);

/// Ordered token list under the same normalization as tokenize().
std::vector<std::string> token_list(std::string_view text);

/// |a∩b| / |a∪b|, with jaccard(∅, ∅) = 1.
double jaccard(const TokenSet& a, const TokenSet& b);
double text_similarity(std::string_view a, std::string_view b);

/// Mean pairwise Jaccard of the three image-present responses.
double score_consistency(const ExpertResponse& r1, const ExpertResponse& r2, const ExpertResponse& r3);

struct DivergenceScore {
  double divergence = 0.0;
  double image_absent_similarity = 0.0;
};

/// Throws std::invalid_argument when `baseline` is not an image-absent probe.
DivergenceScore score_divergence(const ExpertResponse& r1, const ExpertResponse& r2, const ExpertResponse& r3,
                                 const ExpertResponse& baseline);

struct ProbeSet {
  std::array<ExpertQuery, 3> rephrasings;
  ExpertQuery counterfactual;
  std::map<ProbeRole, ExpertResponse> responses;
};

/// Builds the four probes for one sub-query. `media` is attached to the
/// rephrasings only.
ProbeSet make_probe_set(std::string_view question, std::string_view subject, Modality modality,
                        const std::vector<MediaRef>& media, const RephraseTemplates& templates = {});

struct VerifiedFinding {
  std::string sub_query;
  Modality modality = Modality::Ecg;
  std::string answer_text;
  double consistency = 0.0;
  double divergence = 0.0;
  double image_absent_similarity = 0.0;
  double confidence = 0.0;
  bool mirage_flagged = false;
};

class VerificationError : public std::runtime_error {
 public:
  explicit VerificationError(ProbeRole missing);
  ProbeRole missing_role() const noexcept { return missing_; }

 private:
  ProbeRole missing_;
};

VerifiedFinding verify(const ProbeSet& probe_set, const MirageConfig& config = {});

/// Index (0..2) of the image-present response with the highest mean Jaccard
/// to the other two; ties resolve to the lowest index.
std::size_t medoid_index(const std::array<TokenSet, 3>& tokens);

void to_json(nlohmann::json& j, const VerifiedFinding& f);
void from_json(const nlohmann::json& j, VerifiedFinding& f);

}  // namespace cardio::mirage
