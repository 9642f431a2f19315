#include "cardio/mirage.hpp"

#include <algorithm>
#include <cctype>

#include <fmt/format.h>

namespace cardio::mirage {

namespace {

void replace_all(std::string& s, std::string_view from, std::string_view to) {
  std::size_t pos = 0;
  while ((pos = s.find(from, pos)) != std::string::npos) {
    s.replace(pos, from.size(), to);
    pos += to.size();
  }
}

std::string instantiate(std::string tmpl, std::string_view question, std::string_view subject,
                        std::string_view modality) {
  // Substitute {question} last so braces inside a question are left alone.
  replace_all(tmpl, "{subject}", "\x01S\x01");
  replace_all(tmpl, "{modality}", modality);
  replace_all(tmpl, "{question}", "\x01Q\x01");
  replace_all(tmpl, "\x01S\x01", subject);
  replace_all(tmpl, "\x01Q\x01", question);
  return tmpl;
}

}  // namespace

std::array<std::string, 3> rephrase(std::string_view question, std::string_view subject, Modality modality,
                                    const RephraseTemplates& templates) {
  if (question.empty()) throw std::invalid_argument("rephrase: question must be non-empty");
  const std::string_view subj = subject.empty() ? question : subject;
  const auto mod = to_string(modality);
  return {instantiate(templates.direct, question, subj, mod), instantiate(templates.descriptive, question, subj, mod),
          instantiate(templates.imperative, question, subj, mod)};
}

std::vector<std::string> token_list(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (unsigned char c : text) {
    if (std::isspace(c) || std::ispunct(c)) {
      if (!cur.empty()) out.push_back(std::move(cur)), cur.clear();
    } else {
      cur.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

TokenSet tokenize(std::string_view text) {
  auto list = token_list(text);
  return TokenSet(std::make_move_iterator(list.begin()), std::make_move_iterator(list.end()));
}

double jaccard(const TokenSet& a, const TokenSet& b) {
  if (a.empty() && b.empty()) return 1.0;
  std::size_t inter = 0;
  auto ia = a.begin();
  auto ib = b.begin();
  while (ia != a.end() && ib != b.end()) {
    if (*ia < *ib) {
      ++ia;
    } else if (*ib < *ia) {
      ++ib;
    } else {
      ++inter, ++ia, ++ib;
    }
  }
  const std::size_t uni = a.size() + b.size() - inter;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

double text_similarity(std::string_view a, std::string_view b) { return jaccard(tokenize(a), tokenize(b)); }

double score_consistency(const ExpertResponse& r1, const ExpertResponse& r2, const ExpertResponse& r3) {
  const auto t1 = tokenize(r1.text);
  const auto t2 = tokenize(r2.text);
  const auto t3 = tokenize(r3.text);
  return (jaccard(t1, t2) + jaccard(t1, t3) + jaccard(t2, t3)) / 3.0;
}

DivergenceScore score_divergence(const ExpertResponse& r1, const ExpertResponse& r2, const ExpertResponse& r3,
                                 const ExpertResponse& baseline) {
  if (baseline.probe_role != ProbeRole::ImageAbsent) {
    throw std::invalid_argument("score_divergence: baseline must be the image-absent probe");
  }
  const auto tb = tokenize(baseline.text);
  const double sim =
      (jaccard(tokenize(r1.text), tb) + jaccard(tokenize(r2.text), tb) + jaccard(tokenize(r3.text), tb)) / 3.0;
  return {1.0 - sim, sim};
}

ProbeSet make_probe_set(std::string_view question, std::string_view subject, Modality modality,
                        const std::vector<MediaRef>& media, const RephraseTemplates& templates) {
  const auto texts = rephrase(question, subject, modality, templates);
  ProbeSet set;
  for (std::size_t i = 0; i < 3; ++i) {
    set.rephrasings[i] = ExpertQuery{texts[i], modality, media, kAllProbeRoles[i]};
  }
  set.counterfactual = ExpertQuery{std::string(question), modality, std::nullopt, ProbeRole::ImageAbsent};
  return set;
}

VerificationError::VerificationError(ProbeRole missing)
    : std::runtime_error(fmt::format("verification: missing response for probe '{}'", to_string(missing))),
      missing_(missing) {}

std::size_t medoid_index(const std::array<TokenSet, 3>& tokens) {
  std::array<double, 3> score{};
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t k = 0; k < 3; ++k) {
      if (i != k) score[i] += jaccard(tokens[i], tokens[k]);
    }
  }
  std::size_t best = 0;
  for (std::size_t i = 1; i < 3; ++i) {
    if (score[i] > score[best]) best = i;
  }
  return best;
}

VerifiedFinding verify(const ProbeSet& probe_set, const MirageConfig& config) {
  for (auto role : kAllProbeRoles) {
    if (!probe_set.responses.count(role)) throw VerificationError(role);
  }
  const auto& r1 = probe_set.responses.at(ProbeRole::Rephrase1);
  const auto& r2 = probe_set.responses.at(ProbeRole::Rephrase2);
  const auto& r3 = probe_set.responses.at(ProbeRole::Rephrase3);
  const auto& base = probe_set.responses.at(ProbeRole::ImageAbsent);

  VerifiedFinding f;
  f.sub_query = probe_set.counterfactual.question;
  f.modality = probe_set.counterfactual.modality;
  f.consistency = score_consistency(r1, r2, r3);
  const auto div = score_divergence(r1, r2, r3, base);
  f.divergence = div.divergence;
  f.image_absent_similarity = div.image_absent_similarity;
  f.confidence = (f.consistency + f.divergence) / 2.0;
  // Similarities are means of rationals; a value that is mathematically equal
  // to the threshold may land one ulp above it.
  constexpr double kTieTolerance = 1e-12;
  f.mirage_flagged = f.image_absent_similarity > config.threshold + kTieTolerance;

  const std::array<TokenSet, 3> tokens{tokenize(r1.text), tokenize(r2.text), tokenize(r3.text)};
  const std::array<const ExpertResponse*, 3> present{&r1, &r2, &r3};
  f.answer_text = present[medoid_index(tokens)]->text;
  return f;
}

void to_json(nlohmann::json& j, const VerifiedFinding& f) {
  j = nlohmann::json{{"sub_query", f.sub_query},
                     {"modality", f.modality},
                     {"answer_text", f.answer_text},
                     {"consistency", f.consistency},
                     {"divergence", f.divergence},
                     {"image_absent_similarity", f.image_absent_similarity},
                     {"confidence", f.confidence},
                     {"mirage_flagged", f.mirage_flagged}};
}

void from_json(const nlohmann::json& j, VerifiedFinding& f) {
  f.sub_query = j.at("sub_query").get<std::string>();
  f.modality = j.at("modality").get<Modality>();
  f.answer_text = j.at("answer_text").get<std::string>();
  f.consistency = j.at("consistency").get<double>();
  f.divergence = j.at("divergence").get<double>();
  f.image_absent_similarity = j.at("image_absent_similarity").get<double>();
  f.confidence = j.at("confidence").get<double>();
  f.mirage_flagged = j.at("mirage_flagged").get<bool>();
}

}  // namespace cardio::mirage
