#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

// Multi-engine hypothesis combination: pairwise word alignment, an
// interpolated n-gram LM, and a constrained search over aligned hypotheses.
namespace bmtl::combine {

using Words = std::vector<std::string>;

enum class MatchKind { exact, stem };

inline constexpr std::size_t kStemPrefix = 4;
inline constexpr std::size_t kExhaustiveAlignLimit = 20;

struct Link {
  std::size_t a = 0;  // position in the first hypothesis
  std::size_t b = 0;  // position in the second hypothesis
  MatchKind kind = MatchKind::exact;
  friend bool operator==(const Link&, const Link&) = default;
};

// Case-insensitive equality (exact) or a shared prefix of at least
// kStemPrefix characters (stem). Writes the kind when `kind` is given.
bool words_match(std::string_view a, std::string_view b, MatchKind* kind = nullptr);

std::size_t count_crossings(const std::vector<Link>& links);

// One-to-one alignment: maximum link count, then fewest crossing pairs, then
// most exact links, then the lexicographically smallest link list. Exhaustive
// when both sides have at most 20 tokens, greedy left-to-right otherwise.
std::vector<Link> align_pair(const Words& a, const Words& b);

struct HypothesisSet {
  std::vector<Words> hypotheses;
  std::vector<double> confidence;  // empty: uniform 1.0
};

// Symmetric pairwise links between positions of different systems.
class AlignmentGraph {
 public:
  struct Node {
    std::size_t system = 0;
    std::size_t position = 0;
    friend auto operator<=>(const Node&, const Node&) = default;
  };

  static AlignmentGraph build(const std::vector<Words>& hypotheses);

  void add(std::size_t sa, std::size_t pa, std::size_t sb, std::size_t pb, MatchKind kind);
  // Positions linked to (system, position), ordered by system.
  const std::vector<std::pair<Node, MatchKind>>& linked(std::size_t system, std::size_t position) const;
  std::size_t systems() const { return links_.size(); }
  std::size_t link_count() const;

 private:
  std::vector<std::vector<std::vector<std::pair<Node, MatchKind>>>> links_;  // [system][position]
};

// Interpolated n-gram model: P(w | h) = sum_k lambda_k P_k^MLE(w | h) plus
// lambda_0 / |V|, where |V| counts the distinct training words and EOS. MLE
// terms with an unseen context contribute nothing; the unigram term is
// estimated over words only.
class NGramLM {
 public:
  static constexpr std::string_view kBos = "<s>";
  static constexpr std::string_view kEos = "</s>";

  NGramLM() : NGramLM(3, {0.5, 0.3, 0.15, 0.05}) {}
  // lambdas: order + 1 weights, highest order first, lambda_0 last.
  NGramLM(std::size_t order, std::vector<double> lambdas);

  void add_sentence(const Words& words);
  double prob(const Words& context, const std::string& word) const;
  double log_prob(const Words& context, const std::string& word) const;

  std::size_t order() const { return order_; }
  const std::vector<double>& lambdas() const { return lambdas_; }
  std::size_t vocab_size() const { return vocab_.size() + 1; }
  const std::map<std::string, std::uint64_t>& vocab() const { return vocab_; }

  // "#ngram-lm v1" header with order and weights, then per order a line
  // "#order n" followed by "count<TAB>words" records.
  std::string serialize() const;
  static NGramLM parse(std::string_view text);
  void save(const std::string& path) const;
  static NGramLM load(const std::string& path);

 private:
  std::string key(const Words& context, std::size_t take) const;

  std::size_t order_;
  std::vector<double> lambdas_;
  std::vector<std::map<std::string, std::uint64_t>> ngrams_;    // [n-1]: "w1 .. wn" -> count
  std::vector<std::map<std::string, std::uint64_t>> contexts_;  // [n-1]: "w1 .. w(n-1)" -> count
  std::map<std::string, std::uint64_t> vocab_;
  std::uint64_t unigram_total_ = 0;
};

NGramLM train_lm(const std::vector<Words>& corpus, std::size_t order = 3,
                 std::vector<double> lambdas = {0.5, 0.3, 0.15, 0.05});

// Sum of log-probabilities of every word and the closing EOS.
double lm_score(const NGramLM& lm, const Words& words);
// Same without the EOS transition.
double lm_prefix_score(const NGramLM& lm, const Words& words);

struct CombineParams {
  std::size_t beam_size = 32;  // 0: unlimited
  std::size_t radius = 3;
  double w_lm = 1.0;
  double w_sys = 1.0;
  double w_len = 0.0;
};

struct Consumption {
  std::size_t system = 0;
  std::size_t position = 0;
  bool primary = false;  // the picked token; others are aligned duplicates
};

struct CombineStep {
  std::string word;
  std::vector<Consumption> consumed;
};

struct CombineResult {
  Words words;
  double score = 0.0;
  std::vector<CombineStep> trace;
  bool fallback = false;  // no terminated state; best-confidence input returned
};

// The constrained search without shortcuts. A state extends by picking an
// unused token (s, p) with frontier_s <= p <= frontier_s + R; the pick and
// every unused position aligned to it are consumed. No system may hold more
// than R unused positions below its furthest consumed one. Termination is
// allowed once some system is fully consumed. States sharing used masks and
// LM context are recombined.
CombineResult combine_search(const HypothesisSet& set, const AlignmentGraph& graph, const NGramLM& lm,
                             const CombineParams& params);

// Score of following `picks` (system, position) through the search rules,
// then terminating; throws ValidationError when a pick is not allowed.
CombineResult replay(const HypothesisSet& set, const AlignmentGraph& graph, const NGramLM& lm,
                     const CombineParams& params, const std::vector<std::pair<std::size_t, std::size_t>>& picks);

// Single-system and unanimous inputs are returned unchanged; everything else
// goes through combine_search. Throws ValidationError on an empty set.
CombineResult combine(const HypothesisSet& set, const AlignmentGraph& graph, const NGramLM& lm,
                      const CombineParams& params);

// Line-aligned combination of several hypothesis files' contents.
std::vector<std::string> combine_corpus(const std::vector<std::vector<std::string>>& system_lines,
                                        const NGramLM& lm, const CombineParams& params,
                                        const std::vector<double>& confidence = {});

}  // namespace bmtl::combine
