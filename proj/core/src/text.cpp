#include "maskdef/text.hpp"

#include <cctype>

namespace maskdef {

bool is_word_byte(unsigned char c) {
  return std::isalnum(c) != 0 || c == '\'' || c >= 0x80;
}

std::string_view TokenizedSentence::separator_before(std::size_t i) const {
  const std::size_t from = i == 0 ? 0 : spans[i - 1].end;
  const std::size_t to = i < spans.size() ? spans[i].begin : original_text.size();
  return std::string_view(original_text).substr(from, to - from);
}

TokenizedSentence tokenize(std::string_view text) {
  TokenizedSentence out;
  out.original_text.assign(text);
  std::size_t i = 0;
  while (i < text.size()) {
    if (!is_word_byte(static_cast<unsigned char>(text[i]))) {
      ++i;
      continue;
    }
    const std::size_t begin = i;
    while (i < text.size() && is_word_byte(static_cast<unsigned char>(text[i]))) {
      ++i;
    }
    out.words.emplace_back(text.substr(begin, i - begin));
    out.spans.push_back({begin, i});
  }
  return out;
}

bool is_single_word(std::string_view text) {
  if (text.empty()) return false;
  for (char c : text) {
    if (!is_word_byte(static_cast<unsigned char>(c))) return false;
  }
  return true;
}

std::string fold_case(std::string_view word) {
  std::string out(word);
  for (char& c : out) {
    const auto u = static_cast<unsigned char>(c);
    if (u < 0x80) c = static_cast<char>(std::tolower(u));
  }
  return out;
}

CasePattern case_pattern(std::string_view word) {
  std::size_t letters = 0;
  std::size_t upper = 0;
  bool first_upper = false;
  for (char c : word) {
    const auto u = static_cast<unsigned char>(c);
    if (u >= 0x80 || std::isalpha(u) == 0) continue;
    if (letters == 0) first_upper = std::isupper(u) != 0;
    ++letters;
    if (std::isupper(u) != 0) ++upper;
  }
  if (letters > 1 && upper == letters) return CasePattern::kUpper;
  if (first_upper && upper == 1) return CasePattern::kTitle;
  if (letters == 1 && upper == 1) return CasePattern::kTitle;
  return CasePattern::kLower;
}

std::string apply_case(std::string_view folded, CasePattern pattern) {
  std::string out(folded);
  switch (pattern) {
    case CasePattern::kLower:
      break;
    case CasePattern::kUpper:
      for (char& c : out) {
        const auto u = static_cast<unsigned char>(c);
        if (u < 0x80) c = static_cast<char>(std::toupper(u));
      }
      break;
    case CasePattern::kTitle:
      for (char& c : out) {
        const auto u = static_cast<unsigned char>(c);
        if (u < 0x80 && std::isalpha(u) != 0) {
          c = static_cast<char>(std::toupper(u));
          break;
        }
      }
      break;
  }
  return out;
}

std::string masked_context(const TokenizedSentence& sentence,
                           std::size_t position) {
  std::string key;
  for (std::size_t i = 0; i < sentence.size(); ++i) {
    if (i > 0) key.push_back(' ');
    if (i == position) {
      key.push_back('_');
    } else {
      key += fold_case(sentence.words[i]);
    }
  }
  return key;
}

}  // namespace maskdef
