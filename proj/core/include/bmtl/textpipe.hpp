#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <string_view>
#include <vector>

// Corpus normalisation, tokenisation and truecasing with their inverses.
// A small fixed rule table stands in for the usual Moses scripts.
namespace bmtl::textpipe {

using Tokens = std::vector<std::string>;

struct SentenceRecord {
  std::string raw;
  Tokens tokens;
  bool normalized = false;
  bool truecased = false;
};

// NFC composition, the quote/dash rule table below, whitespace collapse and
// trimming. Throws DecodeError naming `line_number` on malformed UTF-8.
//
//   U+201C U+201D U+201E U+201F U+00AB U+00BB U+2033  ->  "
//   U+2018 U+2019 U+201A U+201B U+2032                ->  '
//   U+2010 U+2011 U+2012 U+2013 U+2014 U+2015 U+2212  ->  -
//   U+2026                                            ->  ...
//   U+00A0 U+2000-U+200A U+202F U+3000, TAB, CR, LF   ->  space
std::string normalize_text(std::string_view line, std::size_t line_number = 0);

// Whitespace split, then ASCII punctuation is split off words. Exceptions:
// '.' and ',' between two digits, and '\'' or '-' between two alphanumerics,
// stay inside the token.
Tokens tokenize(std::string_view line);

// Inverse of tokenize for text written with conventional spacing.
std::string detokenize(const Tokens& tokens);

class TruecaseModel {
 public:
  struct Entry {
    std::string surface;
    std::size_t count = 0;
  };

  TruecaseModel() = default;

  void set(const std::string& lowered, Entry entry);
  const Entry* find(const std::string& lowered) const;
  std::size_t size() const { return casing_.size(); }
  const std::map<std::string, Entry>& entries() const { return casing_; }

  // "surface<TAB>count" per line, sorted by lowercased key.
  std::string serialize() const;
  static TruecaseModel parse(std::string_view text);
  void save(const std::string& path) const;
  static TruecaseModel load(const std::string& path);

 private:
  std::map<std::string, Entry> casing_;
};

// Most frequent surface form among non-sentence-initial occurrences, falling
// back to all occurrences for tokens only ever seen sentence-initially.
// Ties go to the lexicographically greatest form, which favours lowercase.
TruecaseModel train_truecaser(const std::vector<Tokens>& corpus);

Tokens apply_truecase(const TruecaseModel& model, const Tokens& tokens);

// Uppercases the first character of the first token when it is a letter.
Tokens detruecase(const Tokens& tokens);

// Unicode-aware helpers shared with other modules.
std::string to_lower(std::string_view text);
bool is_valid_utf8(std::string_view text);
std::vector<std::string> utf8_chars(std::string_view text);

}  // namespace bmtl::textpipe
