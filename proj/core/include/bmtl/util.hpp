#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace bmtl {

// 64-bit FNV-1a. Stable across platforms, used for content hashes in
// manifests and for deriving named random substreams.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t value);

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view contents);
std::uint64_t hash_file(const std::string& path);

std::vector<std::string> read_lines(const std::string& path);
void write_lines(const std::string& path, const std::vector<std::string>& lines);

std::vector<std::string> split_whitespace(std::string_view text);
std::vector<std::string> split(std::string_view text, char sep);
std::string join(const std::vector<std::string>& parts, std::string_view sep);
std::string trim(std::string_view text);

// Shortest text form that parses back to the same double.
std::string format_double(double value);
// Strict numeric parsing; throws ValidationError naming `what`.
double parse_double(std::string_view text, std::string_view what);
std::uint64_t parse_uint(std::string_view text, std::string_view what);

// Seed for a named substream of a master seed ("init", "dropout", ...).
// The optional index distinguishes repeated draws (epoch, update, ...).
std::uint64_t derive_seed(std::uint64_t master, std::string_view stream, std::uint64_t index = 0);

// Uniform double in [0, 1) from a 64-bit engine, independent of the
// standard library's distribution implementations.
inline double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Deterministic Fisher-Yates shuffle (std::shuffle is implementation-defined).
template <typename It>
void stable_shuffle(It first, It last, std::mt19937_64& rng) {
  const auto n = static_cast<std::uint64_t>(last - first);
  for (std::uint64_t i = n; i > 1; --i) {
    const std::uint64_t j = rng() % i;
    std::swap(first[i - 1], first[j]);
  }
}

}  // namespace bmtl
