#include <regex>

#include <fmt/format.h>

#include "cardio/eval.hpp"

namespace cardio::eval {

RemoteLikertJudge::RemoteLikertJudge(gateway::BackendPtr backend) : backend_(std::move(backend)) {
  if (!backend_) throw std::invalid_argument("RemoteLikertJudge: null backend");
}

LikertScore RemoteLikertJudge::judge(std::string_view question, std::string_view reference,
                                     std::string_view response) const {
  const auto prompt = fmt::format(
      "Grade the response against the reference answer on a 1-5 scale (1 = wrong or unsafe, 5 = complete and "
      "correct).\nQuestion: {}\nReference: {}\nResponse: {}\nReply as:\nScore: <1-5>\nExplanation: <one sentence>",
      question, reference, response);
  return parse_judgement(backend_->complete(prompt));
}

LikertScore parse_judgement(std::string_view reply) {
  static const std::regex score_re(R"(score\**\s*[:=]?\s*\**\s*([1-5])\b)", std::regex::ECMAScript | std::regex::icase);
  static const std::regex expl_re(R"(explanation\s*:\s*([^\n]*))", std::regex::ECMAScript | std::regex::icase);
  const std::string text(reply);
  std::smatch m;
  if (!std::regex_search(text, m, score_re)) {
    throw gateway::GatewayError(gateway::GatewayError::Category::Protocol,
                                fmt::format("judge reply has no 1-5 score: '{}'", text.substr(0, 200)), 1);
  }
  const int value = m.str(1)[0] - '0';
  std::string explanation;
  if (std::regex_search(text, m, expl_re)) explanation = m.str(1);
  return LikertScore::make(value, explanation);
}

}  // namespace cardio::eval
