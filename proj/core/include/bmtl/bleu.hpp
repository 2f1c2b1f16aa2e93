#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

// Corpus-level BLEU-4 with a single reference per line.
namespace bmtl::bleu {

inline constexpr int kMaxOrder = 4;
inline constexpr double kZeroMatchFloor = 0.1;

struct NgramStats {
  std::array<std::uint64_t, kMaxOrder> matches{};
  std::array<std::uint64_t, kMaxOrder> totals{};
  std::uint64_t hyp_len = 0;
  std::uint64_t ref_len = 0;

  NgramStats& operator+=(const NgramStats& other);
};

struct BleuReport {
  double bleu = 0.0;                        // 0..100
  std::array<double, kMaxOrder> precisions{};  // m_n / t_n, 0 when t_n = 0
  double brevity_penalty = 0.0;
  std::uint64_t hyp_len = 0;
  std::uint64_t ref_len = 0;

  // "BLEU = 53.73 83.3/60.0/50.0/33.3 (BP=1.000, hyp_len=6, ref_len=6)"
  std::string format() const;
};

// Clipped n-gram counts of one tokenized sentence pair.
NgramStats sentence_stats(const std::vector<std::string>& hyp, const std::vector<std::string>& ref);

BleuReport bleu_from_stats(const NgramStats& stats);

// Both sides are tokenized with textpipe::tokenize before counting.
// Throws ValidationError on mismatched line counts or an empty corpus.
BleuReport corpus_bleu(const std::vector<std::string>& hypotheses, const std::vector<std::string>& references);

}  // namespace bmtl::bleu
