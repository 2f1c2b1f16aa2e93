#include "bmtl/subword.hpp"

#include <limits>
#include <set>
#include <tuple>

#include "bmtl/error.hpp"
#include "bmtl/textpipe.hpp"
#include "bmtl/util.hpp"

namespace bmtl::subword {
namespace {

constexpr std::string_view kMergeHeader = "#bpe-merges v1";
const char* const kReservedTokens[kNumReserved] = {"<pad>", "<s>", "</s>", "<unk>"};

std::vector<std::string> initial_symbols(std::string_view word) {
  auto symbols = textpipe::utf8_chars(word);
  symbols.emplace_back(kEndOfWord);
  return symbols;
}

// Merges occurrences of the lowest-ranked adjacent pair until none remain.
void apply_merges(const MergeTable& table, std::vector<std::string>& symbols) {
  while (symbols.size() > 1) {
    std::size_t best_rank = std::numeric_limits<std::size_t>::max();
    for (std::size_t i = 0; i + 1 < symbols.size(); ++i) {
      if (auto r = table.rank(symbols[i], symbols[i + 1]); r && *r < best_rank) best_rank = *r;
    }
    if (best_rank == std::numeric_limits<std::size_t>::max()) return;
    const Merge& m = table[best_rank];
    std::vector<std::string> next;
    next.reserve(symbols.size());
    for (std::size_t i = 0; i < symbols.size(); ++i) {
      if (i + 1 < symbols.size() && symbols[i] == m.left && symbols[i + 1] == m.right) {
        next.push_back(symbols[i] + symbols[i + 1]);
        ++i;
      } else {
        next.push_back(symbols[i]);
      }
    }
    symbols = std::move(next);
  }
}

std::vector<std::string> fuse_marker(std::vector<std::string> symbols) {
  if (symbols.size() >= 2 && symbols.back() == kEndOfWord) {
    symbols.pop_back();
    symbols.back() += kEndOfWord;
  }
  return symbols;
}

}  // namespace

std::string MergeTable::key(std::string_view left, std::string_view right) {
  std::string k;
  k.reserve(left.size() + right.size() + 1);
  k.append(left);
  k.push_back('\t');
  k.append(right);
  return k;
}

void MergeTable::add(std::string left, std::string right) {
  auto k = key(left, right);
  if (ranks_.count(k)) throw ValidationError("duplicate merge (" + left + ", " + right + ")");
  ranks_.emplace(std::move(k), merges_.size());
  merges_.push_back({std::move(left), std::move(right)});
}

void MergeTable::pop_back() {
  ranks_.erase(key(merges_.back().left, merges_.back().right));
  merges_.pop_back();
}

std::optional<std::size_t> MergeTable::rank(std::string_view left, std::string_view right) const {
  auto it = ranks_.find(key(left, right));
  if (it == ranks_.end()) return std::nullopt;
  return it->second;
}

bool MergeTable::is_prefix_of(const MergeTable& other) const {
  if (size() > other.size()) return false;
  for (std::size_t i = 0; i < size(); ++i) {
    if (!(merges_[i] == other.merges_[i])) return false;
  }
  return true;
}

std::string MergeTable::serialize() const {
  std::string out(kMergeHeader);
  out += '\n';
  for (std::size_t i = 0; i < merges_.size(); ++i) {
    out += std::to_string(i) + '\t' + merges_[i].left + '\t' + merges_[i].right + '\n';
  }
  return out;
}

MergeTable MergeTable::parse(std::string_view text) {
  auto lines = split(text, '\n');
  if (lines.empty() || lines[0] != kMergeHeader) {
    throw VersionMismatchError("merge table: missing or unsupported header (expected '#bpe-merges v1')");
  }
  MergeTable t;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    auto f = split(lines[i], '\t');
    if (f.size() != 3) throw IoError("merge table line " + std::to_string(i + 1) + ": expected 3 fields");
    if (f[0] != std::to_string(t.size())) {
      throw IoError("merge table line " + std::to_string(i + 1) + ": ranks must be contiguous from 0");
    }
    t.add(f[1], f[2]);
  }
  return t;
}

void MergeTable::save(const std::string& path) const { write_file(path, serialize()); }
MergeTable MergeTable::load(const std::string& path) { return parse(read_file(path)); }

SubwordVocabulary::SubwordVocabulary() {
  for (const char* t : kReservedTokens) add(t);
}

int SubwordVocabulary::add(const std::string& token) {
  if (auto it = ids_.find(token); it != ids_.end()) return it->second;
  const int id = static_cast<int>(tokens_.size());
  tokens_.push_back(token);
  ids_.emplace(token, id);
  return id;
}

std::optional<int> SubwordVocabulary::find(std::string_view token) const {
  auto it = ids_.find(std::string(token));
  if (it == ids_.end()) return std::nullopt;
  return it->second;
}

int SubwordVocabulary::id_or_unk(std::string_view token) const { return find(token).value_or(kUnk); }

const std::string& SubwordVocabulary::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw DecodeError("unknown subword id " + std::to_string(id));
  }
  return tokens_[static_cast<std::size_t>(id)];
}

std::string SubwordVocabulary::serialize() const {
  std::string out;
  for (std::size_t i = 0; i < tokens_.size(); ++i) out += tokens_[i] + '\t' + std::to_string(i) + '\n';
  return out;
}

SubwordVocabulary SubwordVocabulary::parse(std::string_view text) {
  SubwordVocabulary v;
  std::size_t lineno = 0;
  for (const auto& line : split(text, '\n')) {
    ++lineno;
    if (line.empty()) continue;
    auto f = split(line, '\t');
    if (f.size() != 2) throw IoError("vocabulary line " + std::to_string(lineno) + ": expected token<TAB>id");
    const auto expected = lineno - 1;
    if (f[1] != std::to_string(expected)) {
      throw IoError("vocabulary line " + std::to_string(lineno) + ": ids must ascend from 0");
    }
    if (expected < kNumReserved) {
      if (f[0] != kReservedTokens[expected]) throw IoError("vocabulary: reserved id " + f[1] + " must be " + kReservedTokens[expected]);
      continue;
    }
    if (v.find(f[0])) throw IoError("vocabulary: duplicate token '" + f[0] + "'");
    v.add(f[0]);
  }
  return v;
}

void SubwordVocabulary::save(const std::string& path) const { write_file(path, serialize()); }
SubwordVocabulary SubwordVocabulary::load(const std::string& path) { return parse(read_file(path)); }

WordCounts count_words(const std::vector<std::vector<std::string>>& corpus) {
  WordCounts counts;
  for (const auto& sentence : corpus) {
    for (const auto& w : sentence) ++counts[w];
  }
  return counts;
}

namespace {

std::set<std::string> base_tokens(const WordCounts& words) {
  std::set<std::string> base;
  for (const auto& [word, count] : words) {
    if (word.empty()) continue;
    for (auto& t : fuse_marker(initial_symbols(word))) base.insert(std::move(t));
  }
  return base;
}

// Incremental pair statistics over the distinct training words.
class PairStats {
 public:
  using Pair = std::pair<std::string, std::string>;

  void add_word(std::size_t index, const std::vector<std::string>& symbols, std::int64_t weight) {
    for (std::size_t i = 0; i + 1 < symbols.size(); ++i) {
      auto& info = pairs_[{symbols[i], symbols[i + 1]}];
      reorder(symbols[i], symbols[i + 1], info.freq, info.freq + weight);
      info.freq += weight;
      ++info.occurrences[index];
    }
  }

  void remove_word(std::size_t index, const std::vector<std::string>& symbols, std::int64_t weight) {
    for (std::size_t i = 0; i + 1 < symbols.size(); ++i) {
      auto it = pairs_.find({symbols[i], symbols[i + 1]});
      auto& info = it->second;
      reorder(symbols[i], symbols[i + 1], info.freq, info.freq - weight);
      info.freq -= weight;
      if (--info.occurrences[index] == 0) info.occurrences.erase(index);
      if (info.freq == 0) pairs_.erase(it);
    }
  }

  // Most frequent pair; ties resolved by the smallest (left, right).
  const Pair* best(std::int64_t* freq) const {
    if (order_.empty()) return nullptr;
    const auto& [neg, left, right] = *order_.begin();
    *freq = -neg;
    return &pairs_.find({left, right})->first;
  }

  std::vector<std::size_t> words_with(const Pair& p) const {
    std::vector<std::size_t> out;
    auto it = pairs_.find(p);
    if (it == pairs_.end()) return out;
    for (const auto& [idx, n] : it->second.occurrences) out.push_back(idx);
    return out;
  }

 private:
  struct Info {
    std::int64_t freq = 0;
    std::map<std::size_t, int> occurrences;
  };

  void reorder(const std::string& l, const std::string& r, std::int64_t from, std::int64_t to) {
    if (from > 0) order_.erase({-from, l, r});
    if (to > 0) order_.insert({-to, l, r});
  }

  std::map<Pair, Info> pairs_;
  std::set<std::tuple<std::int64_t, std::string, std::string>> order_;
};

}  // namespace

std::size_t count_base_symbols(const WordCounts& words) { return base_tokens(words).size(); }

BpeModel learn_bpe(const WordCounts& words, std::size_t target_vocab_size) {
  const std::set<std::string> base = base_tokens(words);
  if (target_vocab_size < base.size() + kNumReserved) {
    throw ValidationError("target vocabulary size " + std::to_string(target_vocab_size) +
                          " is below the base alphabet size " + std::to_string(base.size()) + " plus " +
                          std::to_string(kNumReserved) + " reserved ids");
  }

  struct Word {
    std::string text;
    std::int64_t count;
    std::vector<std::string> symbols;
  };
  std::vector<Word> table;
  for (const auto& [w, c] : words) {
    if (w.empty() || c == 0) continue;
    table.push_back({w, static_cast<std::int64_t>(c), initial_symbols(w)});
  }

  PairStats stats;
  // Output-token occurrence counts across word types, used to size the vocabulary.
  std::map<std::string, std::int64_t> outputs;
  std::size_t extra = 0;  // output tokens in use that are not base tokens
  auto track_outputs = [&](const std::vector<std::string>& symbols, int sign) {
    for (const auto& t : fuse_marker(symbols)) {
      auto& n = outputs[t];
      const bool was = n > 0;
      n += sign;
      const bool is = n > 0;
      if (!base.count(t)) {
        if (!was && is) ++extra;
        if (was && !is) --extra;
      }
    }
  };
  for (std::size_t i = 0; i < table.size(); ++i) {
    stats.add_word(i, table[i].symbols, table[i].count);
    track_outputs(table[i].symbols, +1);
  }

  BpeModel model;
  for (;;) {
    std::int64_t freq = 0;
    const auto* pair = stats.best(&freq);
    if (!pair || freq < 2) break;
    const auto merge = *pair;
    model.merges.add(merge.first, merge.second);
    for (std::size_t idx : stats.words_with(merge)) {
      auto& w = table[idx];
      stats.remove_word(idx, w.symbols, w.count);
      track_outputs(w.symbols, -1);
      w.symbols = initial_symbols(w.text);
      apply_merges(model.merges, w.symbols);
      stats.add_word(idx, w.symbols, w.count);
      track_outputs(w.symbols, +1);
    }
    if (kNumReserved + base.size() + extra > target_vocab_size) {
      model.merges.pop_back();
      break;
    }
  }

  for (const auto& t : base) model.vocab.add(t);
  std::set<std::string> produced;
  for (const auto& w : table) {
    for (auto& t : segment_word(model.merges, w.text)) {
      if (!base.count(t)) produced.insert(std::move(t));
    }
  }
  for (const auto& t : produced) model.vocab.add(t);
  return model;
}

std::vector<std::string> segment_word(const MergeTable& table, std::string_view word) {
  if (word.empty()) return {};
  auto symbols = initial_symbols(word);
  apply_merges(table, symbols);
  return fuse_marker(std::move(symbols));
}

std::vector<int> encode_sentence(const SubwordVocabulary& vocab, const MergeTable& table,
                                 const std::vector<std::string>& words) {
  std::vector<int> ids{kBos};
  for (const auto& w : words) {
    for (const auto& t : segment_word(table, w)) ids.push_back(vocab.id_or_unk(t));
  }
  ids.push_back(kEos);
  return ids;
}

std::vector<std::string> decode_to_words(const SubwordVocabulary& vocab, std::span<const int> ids) {
  std::vector<std::string> words;
  std::string partial;
  auto flush = [&] {
    if (!partial.empty()) words.push_back(std::move(partial));
    partial.clear();
  };
  for (int id : ids) {
    const std::string& tok = vocab.token(id);
    if (id == kPad || id == kBos || id == kEos) continue;
    if (id == kUnk) {
      flush();
      words.push_back(tok);
      continue;
    }
    if (tok.size() >= kEndOfWord.size() && tok.compare(tok.size() - kEndOfWord.size(), kEndOfWord.size(), kEndOfWord) == 0) {
      partial.append(tok, 0, tok.size() - kEndOfWord.size());
      flush();
    } else {
      partial += tok;
    }
  }
  flush();
  return words;
}

}  // namespace bmtl::subword
