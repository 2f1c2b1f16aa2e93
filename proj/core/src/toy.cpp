#include "bmtl/toy.hpp"

#include <algorithm>
#include <cctype>
#include <random>
#include <set>

#include "bmtl/error.hpp"
#include "bmtl/util.hpp"

namespace bmtl::toy {
namespace {

std::vector<std::string> lexicon(const ToyOptions& o) {
  if (o.alphabet_size == 0 || 2 * o.alphabet_size > 26) throw ValidationError("toy alphabet_size must be in 1..13");
  std::mt19937_64 rng(derive_seed(o.seed, "lexicon"));
  std::set<std::string> seen;
  std::vector<std::string> words;
  while (words.size() < o.lexicon_size) {
    const std::size_t len = 2 + rng() % 4;
    std::string w;
    for (std::size_t i = 0; i < len; ++i) w += static_cast<char>('a' + rng() % o.alphabet_size);
    if (seen.insert(w).second) words.push_back(w);
  }
  return words;
}

std::string sentence(std::vector<std::string> words) {
  std::string s = join(words, " ");
  s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
  return s + ".";
}

}  // namespace

std::string cipher(const std::string& word, const ToyOptions& o) {
  std::string out = word;
  for (auto& c : out) c = static_cast<char>(c + static_cast<char>(o.alphabet_size));
  return out;
}

ParallelText generate(std::size_t sentences, const ToyOptions& o, std::uint64_t stream) {
  if (o.min_words == 0 || o.min_words > o.max_words) throw ValidationError("toy sentence length range is empty");
  const auto lex = lexicon(o);
  std::mt19937_64 rng(derive_seed(o.seed, "sentences", stream));
  ParallelText out;
  for (std::size_t i = 0; i < sentences; ++i) {
    const std::size_t n = o.min_words + rng() % (o.max_words - o.min_words + 1);
    std::vector<std::string> src, tgt;
    for (std::size_t j = 0; j < n; ++j) src.push_back(lex[rng() % lex.size()]);
    for (auto it = src.rbegin(); it != src.rend(); ++it) tgt.push_back(cipher(*it, o));
    out.source.push_back(sentence(src));
    out.target.push_back(sentence(tgt));
  }
  return out;
}

}  // namespace bmtl::toy
