#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace maskdef {

/// Half-open byte range into the source text.
struct Span {
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t size() const { return end - begin; }
  friend bool operator==(const Span&, const Span&) = default;
};

/// A sentence split into words, keeping the byte span of each word so that
/// everything between words (whitespace, punctuation) survives untouched.
struct TokenizedSentence {
  std::string original_text;
  std::vector<std::string> words;
  std::vector<Span> spans;

  std::size_t size() const { return words.size(); }
  bool empty() const { return words.empty(); }

  /// Bytes between word i-1 and word i (i == size() gives the trailing tail).
  std::string_view separator_before(std::size_t i) const;

  friend bool operator==(const TokenizedSentence&,
                         const TokenizedSentence&) = default;
};

// Words are maximal runs of ASCII letters, digits and apostrophes. Bytes of
// multi-byte UTF-8 sequences count as letters so non-ASCII words stay whole.
bool is_word_byte(unsigned char c);

TokenizedSentence tokenize(std::string_view text);

/// True when `text` tokenizes to exactly one word covering all of it.
bool is_single_word(std::string_view text);

/// ASCII lower-casing; non-ASCII bytes pass through.
std::string fold_case(std::string_view word);

enum class CasePattern { kLower, kTitle, kUpper };

CasePattern case_pattern(std::string_view word);

/// Re-applies `pattern` to an already case-folded word.
std::string apply_case(std::string_view folded, CasePattern pattern);

/// Masked-context key: case-folded words joined by single spaces with the
/// word at `position` replaced by "_".
std::string masked_context(const TokenizedSentence& sentence,
                           std::size_t position);

}  // namespace maskdef
