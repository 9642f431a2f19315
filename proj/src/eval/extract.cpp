#include <cctype>
#include <regex>

#include "cardio/eval.hpp"

namespace cardio::eval {

namespace {

// Phrase match is case-insensitive; the letter itself is checked afterwards
// so that "the answer is a bit unclear" does not yield A.
const std::regex& answer_is() {
  static const std::regex re(R"(the\s+(?:final\s+|correct\s+)?answer\s+is\s*[:\-]?\s*(?:option\s+)?([\(\[\*"']*)\s*([a-e])([\)\]\*"']*)(?![a-z0-9]))",
                             std::regex::ECMAScript | std::regex::icase);
  return re;
}

const std::regex& leading_option() {
  static const std::regex re(R"(^\s*\(?([A-E])[.)][ \t]+\S)");
  return re;
}

const std::regex& bare_letter() {
  static const std::regex re(R"(^\s*[\(\[\*]*([A-E])[\)\]\*]*[.:]?\s*$)");
  return re;
}

bool only_trailing_punct(std::string_view rest) {
  for (char c : rest) {
    if (c == '\n') return true;
    if (!std::isspace(static_cast<unsigned char>(c)) && !std::ispunct(static_cast<unsigned char>(c))) return false;
  }
  return true;
}

}  // namespace

std::optional<char> extract_choice(std::string_view response) {
  const std::string text(response);

  std::optional<char> last;
  for (auto it = std::sregex_iterator(text.begin(), text.end(), answer_is()); it != std::sregex_iterator(); ++it) {
    const auto& m = *it;
    const char letter = m.str(2)[0];
    if (letter >= 'A' && letter <= 'E') {
      last = letter;
      continue;
    }
    // Lower-case letters only count when bracketed or ending the sentence.
    const bool bracketed = !m.str(1).empty() && !m.str(3).empty();
    const auto rest = std::string_view(text).substr(static_cast<std::size_t>(m.position(0) + m.length(0)));
    if (bracketed || only_trailing_punct(rest)) last = static_cast<char>(letter - 'a' + 'A');
  }
  if (last) return last;

  std::smatch m;
  if (std::regex_search(text, m, leading_option()) && m.position(0) == 0) return m.str(1)[0];

  std::optional<char> standalone;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string::npos) end = text.size();
    const std::string line = text.substr(start, end - start);
    if (std::regex_match(line, m, bare_letter())) standalone = m.str(1)[0];
    start = end + 1;
  }
  return standalone;
}

}  // namespace cardio::eval
