#include "bmtl/bleu.hpp"

#include <cmath>
#include <cstdio>
#include <map>

#include "bmtl/error.hpp"
#include "bmtl/textpipe.hpp"

namespace bmtl::bleu {
namespace {

using Ngram = std::vector<std::string>;

std::map<Ngram, std::uint64_t> ngram_counts(const std::vector<std::string>& tokens, std::size_t n) {
  std::map<Ngram, std::uint64_t> counts;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
    ++counts[Ngram(tokens.begin() + static_cast<std::ptrdiff_t>(i), tokens.begin() + static_cast<std::ptrdiff_t>(i + n))];
  }
  return counts;
}

}  // namespace

NgramStats& NgramStats::operator+=(const NgramStats& other) {
  for (int n = 0; n < kMaxOrder; ++n) {
    matches[n] += other.matches[n];
    totals[n] += other.totals[n];
  }
  hyp_len += other.hyp_len;
  ref_len += other.ref_len;
  return *this;
}

NgramStats sentence_stats(const std::vector<std::string>& hyp, const std::vector<std::string>& ref) {
  NgramStats s;
  s.hyp_len = hyp.size();
  s.ref_len = ref.size();
  for (int n = 1; n <= kMaxOrder; ++n) {
    const auto h = ngram_counts(hyp, static_cast<std::size_t>(n));
    const auto r = ngram_counts(ref, static_cast<std::size_t>(n));
    for (const auto& [gram, count] : h) {
      s.totals[n - 1] += count;
      if (auto it = r.find(gram); it != r.end()) s.matches[n - 1] += std::min(count, it->second);
    }
  }
  return s;
}

BleuReport bleu_from_stats(const NgramStats& stats) {
  BleuReport report;
  report.hyp_len = stats.hyp_len;
  report.ref_len = stats.ref_len;
  double log_sum = 0.0;
  int orders = 0;
  for (int n = 0; n < kMaxOrder; ++n) {
    if (stats.totals[n] == 0) continue;
    const auto t = static_cast<double>(stats.totals[n]);
    const auto m = static_cast<double>(stats.matches[n]);
    report.precisions[n] = m / t;
    log_sum += std::log(std::max(m, kZeroMatchFloor) / t);
    ++orders;
  }
  if (stats.hyp_len == 0) {
    report.brevity_penalty = stats.ref_len == 0 ? 1.0 : 0.0;
    return report;
  }
  const double ratio = static_cast<double>(stats.ref_len) / static_cast<double>(stats.hyp_len);
  report.brevity_penalty = std::min(1.0, std::exp(1.0 - ratio));
  if (orders > 0) report.bleu = 100.0 * report.brevity_penalty * std::exp(log_sum / orders);
  return report;
}

BleuReport corpus_bleu(const std::vector<std::string>& hypotheses, const std::vector<std::string>& references) {
  if (hypotheses.size() != references.size()) {
    throw ValidationError("corpus_bleu: " + std::to_string(hypotheses.size()) + " hypotheses vs " +
                          std::to_string(references.size()) + " references");
  }
  if (hypotheses.empty()) throw ValidationError("corpus_bleu: empty corpus");
  NgramStats total;
  for (std::size_t i = 0; i < hypotheses.size(); ++i) {
    total += sentence_stats(textpipe::tokenize(hypotheses[i]), textpipe::tokenize(references[i]));
  }
  return bleu_from_stats(total);
}

std::string BleuReport::format() const {
  char buf[160];
  std::snprintf(buf, sizeof buf, "BLEU = %.2f %.1f/%.1f/%.1f/%.1f (BP=%.3f, hyp_len=%llu, ref_len=%llu)", bleu,
                100 * precisions[0], 100 * precisions[1], 100 * precisions[2], 100 * precisions[3], brevity_penalty,
                static_cast<unsigned long long>(hyp_len), static_cast<unsigned long long>(ref_len));
  return buf;
}

}  // namespace bmtl::bleu
