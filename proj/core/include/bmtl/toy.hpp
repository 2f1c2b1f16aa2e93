#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

// Synthetic parallel corpus for smoke runs: the target reverses the word
// order of the source and spells every word in a shifted alphabet.
namespace bmtl::toy {

struct ToyOptions {
  std::size_t lexicon_size = 32;
  std::size_t alphabet_size = 12;  // source letters 'a'..; target letters follow them
  std::size_t min_words = 3;
  std::size_t max_words = 6;
  std::uint64_t seed = 2024;
};

struct ParallelText {
  std::vector<std::string> source;
  std::vector<std::string> target;
};

// Raw sentences: capitalised first word, final period.
ParallelText generate(std::size_t sentences, const ToyOptions& options, std::uint64_t stream);

// Target word for a source word (letter shift by alphabet_size).
std::string cipher(const std::string& word, const ToyOptions& options);

}  // namespace bmtl::toy
