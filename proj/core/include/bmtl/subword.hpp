#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace bmtl::subword {

inline constexpr std::string_view kEndOfWord = "</w>";

inline constexpr int kPad = 0;
inline constexpr int kBos = 1;
inline constexpr int kEos = 2;
inline constexpr int kUnk = 3;
inline constexpr int kNumReserved = 4;

struct Merge {
  std::string left;
  std::string right;
  friend bool operator==(const Merge&, const Merge&) = default;
};

// Ordered merge operations; rank is the position in the table.
class MergeTable {
 public:
  void add(std::string left, std::string right);
  void pop_back();
  std::size_t size() const { return merges_.size(); }
  bool empty() const { return merges_.empty(); }
  const Merge& operator[](std::size_t rank) const { return merges_[rank]; }
  const std::vector<Merge>& merges() const { return merges_; }
  std::optional<std::size_t> rank(std::string_view left, std::string_view right) const;
  bool is_prefix_of(const MergeTable& other) const;

  // "#bpe-merges v1" header, then "rank<TAB>left<TAB>right" lines.
  std::string serialize() const;
  static MergeTable parse(std::string_view text);
  void save(const std::string& path) const;
  static MergeTable load(const std::string& path);

 private:
  static std::string key(std::string_view left, std::string_view right);
  std::vector<Merge> merges_;
  std::unordered_map<std::string, std::size_t> ranks_;
};

// Token <-> id bijection with PAD=0, BOS=1, EOS=2, UNK=3.
class SubwordVocabulary {
 public:
  SubwordVocabulary();

  int add(const std::string& token);
  std::optional<int> find(std::string_view token) const;
  int id_or_unk(std::string_view token) const;
  const std::string& token(int id) const;
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  // "token<TAB>id" lines, ids ascending.
  std::string serialize() const;
  static SubwordVocabulary parse(std::string_view text);
  void save(const std::string& path) const;
  static SubwordVocabulary load(const std::string& path);

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
};

using WordCounts = std::map<std::string, std::uint64_t>;

WordCounts count_words(const std::vector<std::vector<std::string>>& corpus);

struct BpeModel {
  MergeTable merges;
  SubwordVocabulary vocab;
};

// Greedy frequency-based merge learning. The word is split into characters
// followed by a separate "</w>" symbol; output tokens fuse that marker into
// the final symbol. The vocabulary holds the reserved ids, every initial
// output token, and every output token the learned table produces on the
// training words; learning stops before a merge would push it past the
// budget, or when no pair occurs at least twice. Pair-frequency ties break
// on lexicographic (left, right).
BpeModel learn_bpe(const WordCounts& words, std::size_t target_vocab_size);

// Base output tokens (characters, plus the fused final-character forms).
std::size_t count_base_symbols(const WordCounts& words);

std::vector<std::string> segment_word(const MergeTable& table, std::string_view word);

std::vector<int> encode_sentence(const SubwordVocabulary& vocab, const MergeTable& table,
                                 const std::vector<std::string>& words);

// Strips PAD/BOS/EOS and rebuilds words at "</w>" markers. UNK becomes a
// standalone "<unk>" word. Throws DecodeError on an id outside the vocabulary.
std::vector<std::string> decode_to_words(const SubwordVocabulary& vocab, std::span<const int> ids);

}  // namespace bmtl::subword
