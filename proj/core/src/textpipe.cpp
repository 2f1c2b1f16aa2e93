#include "bmtl/textpipe.hpp"

#include <unicode/normalizer2.h>
#include <unicode/uchar.h>
#include <unicode/unistr.h>
#include <unicode/utf8.h>

#include <cctype>
#include <sstream>
#include <unordered_map>

#include "bmtl/error.hpp"
#include "bmtl/util.hpp"

namespace bmtl::textpipe {
namespace {

void append_utf8(std::string& out, UChar32 cp) {
  char buf[U8_MAX_LENGTH];
  int32_t len = 0;
  UBool error = false;
  U8_APPEND(reinterpret_cast<uint8_t*>(buf), len, U8_MAX_LENGTH, cp, error);
  if (error) return;
  out.append(buf, static_cast<std::size_t>(len));
}

std::vector<UChar32> code_points(std::string_view text) {
  std::vector<UChar32> cps;
  const auto* s = reinterpret_cast<const uint8_t*>(text.data());
  const auto n = static_cast<int32_t>(text.size());
  int32_t i = 0;
  while (i < n) {
    UChar32 c;
    U8_NEXT(s, i, n, c);
    cps.push_back(c);
  }
  return cps;
}

std::string encode(const std::vector<UChar32>& cps) {
  std::string out;
  for (UChar32 c : cps) append_utf8(out, c);
  return out;
}

// Returns the replacement for `c` per the rule table, or nullptr.
const char* rule_table(UChar32 c) {
  switch (c) {
    case 0x201C: case 0x201D: case 0x201E: case 0x201F:
    case 0x00AB: case 0x00BB: case 0x2033:
      return "\"";
    case 0x2018: case 0x2019: case 0x201A: case 0x201B: case 0x2032:
      return "'";
    case 0x2010: case 0x2011: case 0x2012: case 0x2013:
    case 0x2014: case 0x2015: case 0x2212:
      return "-";
    case 0x2026:
      return "...";
    case 0x00A0: case 0x202F: case 0x3000: case '\t': case '\r': case '\n':
      return " ";
    default:
      if (c >= 0x2000 && c <= 0x200A) return " ";
      return nullptr;
  }
}

bool is_ascii_punct(UChar32 c) { return c < 0x80 && std::ispunct(static_cast<int>(c)); }
bool is_digit(UChar32 c) { return c >= '0' && c <= '9'; }
bool is_alnum(UChar32 c) { return c < 0x80 ? std::isalnum(static_cast<int>(c)) != 0 : u_isalnum(c) != 0; }

bool left_attaching(const std::string& t) {
  return t == "." || t == "," || t == "!" || t == "?" || t == ";" || t == ":" || t == ")" ||
         t == "]" || t == "}" || t == "%";
}
bool right_attaching(const std::string& t) { return t == "(" || t == "[" || t == "{" || t == "$"; }

}  // namespace

bool is_valid_utf8(std::string_view text) {
  const auto* s = reinterpret_cast<const uint8_t*>(text.data());
  const auto n = static_cast<int32_t>(text.size());
  int32_t i = 0;
  while (i < n) {
    UChar32 c;
    U8_NEXT(s, i, n, c);
    if (c < 0) return false;
  }
  return true;
}

std::vector<std::string> utf8_chars(std::string_view text) {
  std::vector<std::string> out;
  for (UChar32 c : code_points(text)) {
    std::string ch;
    append_utf8(ch, c);
    out.push_back(std::move(ch));
  }
  return out;
}

std::string to_lower(std::string_view text) {
  auto cps = code_points(text);
  for (auto& c : cps) c = u_tolower(c);
  return encode(cps);
}

std::string normalize_text(std::string_view line, std::size_t line_number) {
  if (!is_valid_utf8(line)) {
    throw DecodeError("invalid UTF-8 on line " + std::to_string(line_number));
  }
  UErrorCode status = U_ZERO_ERROR;
  const icu::Normalizer2* nfc = icu::Normalizer2::getNFCInstance(status);
  if (U_FAILURE(status)) throw Error("ICU NFC normaliser unavailable");
  icu::UnicodeString composed =
      nfc->normalize(icu::UnicodeString::fromUTF8(icu::StringPiece(line.data(), static_cast<int32_t>(line.size()))),
                     status);
  if (U_FAILURE(status)) throw DecodeError("normalisation failed on line " + std::to_string(line_number));
  std::string utf8;
  composed.toUTF8String(utf8);

  std::string mapped;
  mapped.reserve(utf8.size());
  for (UChar32 c : code_points(utf8)) {
    if (const char* r = rule_table(c)) {
      mapped += r;
    } else {
      append_utf8(mapped, c);
    }
  }
  return join(split_whitespace(mapped), " ");
}

Tokens tokenize(std::string_view line) {
  Tokens out;
  for (const auto& chunk : split_whitespace(line)) {
    const auto cps = code_points(chunk);
    std::vector<UChar32> word;
    auto flush = [&] {
      if (!word.empty()) out.push_back(encode(word));
      word.clear();
    };
    for (std::size_t i = 0; i < cps.size(); ++i) {
      const UChar32 c = cps[i];
      if (!is_ascii_punct(c)) {
        word.push_back(c);
        continue;
      }
      const bool has_prev = i > 0, has_next = i + 1 < cps.size();
      const bool numeric_sep = (c == '.' || c == ',') && has_prev && has_next && is_digit(cps[i - 1]) &&
                               is_digit(cps[i + 1]);
      const bool word_joiner = (c == '\'' || c == '-') && has_prev && has_next && !word.empty() &&
                               is_alnum(cps[i - 1]) && is_alnum(cps[i + 1]);
      if (numeric_sep || word_joiner) {
        word.push_back(c);
        continue;
      }
      flush();
      std::string p;
      append_utf8(p, c);
      out.push_back(std::move(p));
    }
    flush();
  }
  return out;
}

std::string detokenize(const Tokens& tokens) {
  std::string out;
  bool glue_next = true;
  bool double_open = false, single_open = false;
  for (const auto& tok : tokens) {
    bool space = !glue_next;
    glue_next = false;
    if (left_attaching(tok)) {
      space = false;
    } else if (right_attaching(tok)) {
      glue_next = true;
    } else if (tok == "\"" || tok == "'") {
      bool& open = tok == "\"" ? double_open : single_open;
      if (!open) {
        glue_next = true;
      } else {
        space = false;
      }
      open = !open;
    }
    if (space) out += ' ';
    out += tok;
  }
  return out;
}

void TruecaseModel::set(const std::string& lowered, Entry entry) {
  if (entry.count == 0) throw ValidationError("truecase count must be >= 1 for '" + lowered + "'");
  if (to_lower(entry.surface) != lowered) {
    throw ValidationError("surface form '" + entry.surface + "' does not lowercase to '" + lowered + "'");
  }
  casing_[lowered] = std::move(entry);
}

const TruecaseModel::Entry* TruecaseModel::find(const std::string& lowered) const {
  auto it = casing_.find(lowered);
  return it == casing_.end() ? nullptr : &it->second;
}

std::string TruecaseModel::serialize() const {
  std::string out;
  for (const auto& [key, e] : casing_) {
    out += e.surface;
    out += '\t';
    out += std::to_string(e.count);
    out += '\n';
  }
  return out;
}

TruecaseModel TruecaseModel::parse(std::string_view text) {
  TruecaseModel m;
  std::size_t lineno = 0;
  for (const auto& line : split(text, '\n')) {
    ++lineno;
    if (line.empty()) continue;
    const auto fields = split(line, '\t');
    if (fields.size() != 2) throw IoError("truecase model line " + std::to_string(lineno) + ": expected surface<TAB>count");
    std::size_t count = 0;
    try {
      count = std::stoul(fields[1]);
    } catch (const std::exception&) {
      throw IoError("truecase model line " + std::to_string(lineno) + ": bad count");
    }
    m.set(to_lower(fields[0]), {fields[0], count});
  }
  return m;
}

void TruecaseModel::save(const std::string& path) const { write_file(path, serialize()); }
TruecaseModel TruecaseModel::load(const std::string& path) { return parse(read_file(path)); }

TruecaseModel train_truecaser(const std::vector<Tokens>& corpus) {
  if (corpus.empty()) throw ValidationError("train_truecaser: empty corpus");
  struct Counts {
    std::size_t inner = 0;
    std::size_t all = 0;
  };
  std::map<std::string, std::map<std::string, Counts>> stats;
  for (const auto& sentence : corpus) {
    for (std::size_t i = 0; i < sentence.size(); ++i) {
      auto& c = stats[to_lower(sentence[i])][sentence[i]];
      ++c.all;
      if (i > 0) ++c.inner;
    }
  }
  TruecaseModel model;
  for (const auto& [lowered, forms] : stats) {
    bool any_inner = false;
    for (const auto& [surface, c] : forms) any_inner = any_inner || c.inner > 0;
    const std::string* best = nullptr;
    std::size_t best_count = 0;
    // Ascending iteration with >= keeps the lexicographically greatest on ties.
    for (const auto& [surface, c] : forms) {
      const std::size_t n = any_inner ? c.inner : c.all;
      if (n > 0 && n >= best_count) {
        best = &surface;
        best_count = n;
      }
    }
    model.set(lowered, {*best, best_count});
  }
  return model;
}

Tokens apply_truecase(const TruecaseModel& model, const Tokens& tokens) {
  Tokens out = tokens;
  if (out.empty()) return out;
  auto& head = out.front();
  if (const auto* e = model.find(to_lower(head))) {
    head = e->surface;
    return out;
  }
  auto cps = code_points(head);
  bool tail_lower = true;
  for (std::size_t i = 1; i < cps.size(); ++i) tail_lower = tail_lower && !u_isUUppercase(cps[i]);
  if (tail_lower && !cps.empty()) {
    cps[0] = u_tolower(cps[0]);
    head = encode(cps);
  }
  return out;
}

Tokens detruecase(const Tokens& tokens) {
  Tokens out = tokens;
  if (out.empty() || out.front().empty()) return out;
  auto cps = code_points(out.front());
  if (u_isalpha(cps[0])) {
    cps[0] = u_toupper(cps[0]);
    out.front() = encode(cps);
  }
  return out;
}

}  // namespace bmtl::textpipe
