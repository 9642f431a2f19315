#include <algorithm>

#include <fmt/format.h>

#include "cardio/orchestrator.hpp"

namespace cardio::orchestrator {

using nlohmann::json;

PolarityLexicon PolarityLexicon::from_json(const json& j) {
  auto set_of = [&](const char* key) {
    std::set<std::string> out;
    for (const auto& w : j.value(key, json::array())) {
      for (auto& t : mirage::token_list(w.get<std::string>())) out.insert(std::move(t));
    }
    return out;
  };
  return PolarityLexicon{set_of("positive"), set_of("negative"), set_of("negation"), set_of("stopwords")};
}

PolarityLexicon PolarityLexicon::load(const std::string& path) {
  try {
    return from_json(json::parse(read_file(path)));
  } catch (const json::exception& e) {
    throw std::invalid_argument(fmt::format("polarity lexicon '{}': {}", path, e.what()));
  }
}

PolarityLexicon PolarityLexicon::builtin() {
  PolarityLexicon lex;
  lex.positive = {"present", "abnormal", "seen", "detected", "evident", "positive", "increased", "elevated",
                  "reduced", "enlarged", "dilated", "thickened", "identified"};
  lex.negative = {"absent", "normal", "negative", "unremarkable", "preserved"};
  lex.negation = {"no", "not", "without", "none", "never"};
  lex.stopwords = {"a",     "an",   "the",   "is",     "are",       "was",  "were",     "be",     "there",
                   "of",    "in",   "on",    "at",     "with",      "and",  "or",       "this",   "that",
                   "these", "it",   "its",   "to",     "for",       "by",   "as",       "patient", "study",
                   "mild",  "mildly", "moderate", "moderately", "severe", "severely", "likely", "appears", "findings"};
  return lex;
}

namespace {

std::vector<std::string> split_clauses(std::string_view text) {
  std::vector<std::string> clauses;
  std::string cur;
  for (char c : text) {
    if (c == '.' || c == ';' || c == ',' || c == '!' || c == '?' || c == '\n') {
      clauses.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  clauses.push_back(std::move(cur));
  // "X but Y" carries two independent statements.
  std::vector<std::string> out;
  for (auto& clause : clauses) {
    const auto tokens = mirage::token_list(clause);
    std::string part;
    for (const auto& t : tokens) {
      if (t == "but" || t == "whereas" || t == "although") {
        out.push_back(std::move(part));
        part.clear();
      } else {
        part += part.empty() ? t : " " + t;
      }
    }
    out.push_back(std::move(part));
  }
  out.erase(std::remove_if(out.begin(), out.end(), [](const std::string& s) { return s.empty(); }), out.end());
  return out;
}

}  // namespace

std::vector<Assertion> extract_assertions(std::string_view answer, const PolarityLexicon& lex) {
  std::vector<Assertion> out;
  for (const auto& clause : split_clauses(answer)) {
    const auto tokens = mirage::token_list(clause);
    std::optional<bool> marker;  // first polarity marker in the clause
    bool negated = false;
    std::size_t first_marker = tokens.size();
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      const auto& t = tokens[i];
      const bool is_neg = lex.negation.count(t) > 0;
      const bool is_pos = lex.positive.count(t) > 0;
      const bool is_negative = lex.negative.count(t) > 0;
      if (is_neg) negated = true;
      if (!marker && (is_pos || is_negative)) marker = is_pos;
      if ((is_neg || is_pos || is_negative) && first_marker == tokens.size()) first_marker = i;
    }
    if (!marker && !negated) continue;
    const bool positive = (marker.value_or(true)) != negated;

    auto is_content = [&](const std::string& t) {
      return !lex.positive.count(t) && !lex.negative.count(t) && !lex.negation.count(t) && !lex.stopwords.count(t);
    };
    std::vector<std::string> np;
    for (std::size_t i = 0; i < first_marker; ++i) {
      if (is_content(tokens[i])) np.push_back(tokens[i]);
    }
    if (np.empty()) {
      for (std::size_t i = first_marker + 1; i < tokens.size(); ++i) {
        if (!is_content(tokens[i])) {
          if (!np.empty()) break;
          continue;
        }
        np.push_back(tokens[i]);
      }
    }
    if (np.empty()) continue;
    std::string phrase;
    for (const auto& t : np) phrase += phrase.empty() ? t : " " + t;
    out.push_back(Assertion{np.back(), std::move(phrase), positive});
  }
  return out;
}

int precedence(Modality m) {
  switch (m) {
    case Modality::Cmr: return 3;
    case Modality::Echo: return 2;
    case Modality::Ecg: return 1;
  }
  return 0;
}

ConflictResolution resolve_conflict(const std::vector<mirage::VerifiedFinding>& findings,
                                    const PolarityLexicon& lexicon) {
  ConflictResolution out;
  if (findings.size() < 2) {
    out.summary = "Single modality; no cross-modality conflicts.";
    return out;
  }
  std::vector<std::vector<Assertion>> assertions;
  for (const auto& f : findings) assertions.push_back(extract_assertions(f.answer_text, lexicon));

  std::set<std::tuple<std::string, Modality, Modality>> seen;
  for (std::size_t i = 0; i < findings.size(); ++i) {
    for (std::size_t k = i + 1; k < findings.size(); ++k) {
      for (const auto& a : assertions[i]) {
        for (const auto& b : assertions[k]) {
          if (a.head != b.head || a.positive == b.positive) continue;
          const auto& fa = findings[i];
          const auto& fb = findings[k];
          const bool a_wins = fa.confidence > fb.confidence ||
                              (fa.confidence == fb.confidence && precedence(fa.modality) > precedence(fb.modality));
          const auto& win = a_wins ? fa : fb;
          const auto& lose = a_wins ? fb : fa;
          if (!seen.emplace(a.head, win.modality, lose.modality).second) continue;
          out.contests.push_back(ContestedAssertion{a.head, win.modality, lose.modality,
                                                    a_wins ? a.positive : b.positive, win.confidence,
                                                    lose.confidence});
        }
      }
    }
  }
  if (out.contests.empty()) {
    out.summary = "No conflicting assertions between modalities.";
    return out;
  }
  out.summary = "Conflicts resolved by confidence:";
  for (const auto& c : out.contests) {
    out.summary += fmt::format(" '{}': {} ({}, confidence {:.2f}) over {} (confidence {:.2f}).", c.subject,
                               display_name(c.winner), c.winner_positive ? "present" : "absent", c.winner_confidence,
                               display_name(c.loser), c.loser_confidence);
  }
  return out;
}

}  // namespace cardio::orchestrator
