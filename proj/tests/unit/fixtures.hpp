#pragma once

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "bmtl/seq2seq.hpp"
#include "bmtl/training.hpp"
#include "bmtl/util.hpp"

namespace fixtures {

// Copy task over ids 4..(4+symbols-1): every decoder reproduces the source.
inline std::vector<bmtl::training::Example> copy_examples(std::size_t n, std::size_t decoders, std::uint64_t seed,
                                                          int symbols = 4, std::size_t max_len = 4) {
  std::mt19937_64 rng(seed);
  std::vector<bmtl::training::Example> out;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<int> s{1};
    const auto len = 1 + rng() % max_len;
    for (std::size_t j = 0; j < len; ++j) s.push_back(4 + static_cast<int>(rng() % static_cast<std::uint64_t>(symbols)));
    s.push_back(2);
    out.push_back({s, std::vector<std::vector<int>>(decoders, s)});
  }
  return out;
}

inline bmtl::model::ModelConfig copy_config(std::size_t decoders, int symbols = 4) {
  bmtl::model::ModelConfig c;
  c.embedding_dim = 8;
  c.encoder_hidden = 8;
  c.encoder_layers = 1;
  c.decoder_hidden = 16;
  c.dropout = 0.0;
  c.source_vocab_size = 4 + static_cast<std::size_t>(symbols);
  for (std::size_t k = 0; k < decoders; ++k) c.decoders.push_back({"d" + std::to_string(k), c.source_vocab_size});
  return c;
}

inline std::string temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("bmtl_unit_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p.string();
}

}  // namespace fixtures
