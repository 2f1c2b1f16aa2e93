#include <doctest.h>

#include <algorithm>
#include <map>
#include <random>
#include <set>

#include "bmtl/error.hpp"
#include "bmtl/subword.hpp"
#include "bmtl/textpipe.hpp"

using namespace bmtl::subword;

namespace {

// Textbook BPE: recount every pair after each merge, apply the merge to all
// words left to right.
struct NaiveBpe {
  std::vector<Merge> merges;
  std::set<std::string> vocab;
};

std::vector<std::string> fused(std::vector<std::string> s) {
  if (s.size() >= 2 && s.back() == "</w>") {
    s.pop_back();
    s.back() += "</w>";
  }
  return s;
}

NaiveBpe naive_bpe(const WordCounts& counts, std::size_t budget) {
  std::vector<std::pair<std::vector<std::string>, std::uint64_t>> words;
  std::set<std::string> base;
  for (const auto& [w, c] : counts) {
    auto s = bmtl::textpipe::utf8_chars(w);
    s.push_back("</w>");
    for (const auto& t : fused(s)) base.insert(t);
    words.push_back({s, c});
  }
  auto vocab_of = [&] {
    auto v = base;
    for (const auto& [s, c] : words) {
      for (const auto& t : fused(s)) v.insert(t);
    }
    return v;
  };
  NaiveBpe out;
  for (;;) {
    std::map<std::pair<std::string, std::string>, std::uint64_t> pairs;
    for (const auto& [s, c] : words) {
      for (std::size_t i = 0; i + 1 < s.size(); ++i) pairs[{s[i], s[i + 1]}] += c;
    }
    std::pair<std::string, std::string> best;
    std::uint64_t freq = 0;
    for (const auto& [p, f] : pairs) {
      if (f > freq) {
        freq = f;
        best = p;
      }
    }
    if (freq < 2) break;
    auto saved = words;
    for (auto& [s, c] : words) {
      std::vector<std::string> next;
      for (std::size_t i = 0; i < s.size(); ++i) {
        if (i + 1 < s.size() && s[i] == best.first && s[i + 1] == best.second) {
          next.push_back(s[i] + s[i + 1]);
          ++i;
        } else {
          next.push_back(s[i]);
        }
      }
      s = next;
    }
    if (vocab_of().size() + kNumReserved > budget) {
      words = saved;
      break;
    }
    out.merges.push_back({best.first, best.second});
  }
  out.vocab = vocab_of();
  return out;
}

WordCounts random_corpus(std::uint64_t seed, std::size_t types, const std::string& alphabet) {
  std::mt19937_64 rng(seed);
  WordCounts wc;
  for (std::size_t i = 0; i < types; ++i) {
    std::string w;
    const auto len = 1 + rng() % 7;
    for (std::size_t j = 0; j < len; ++j) w += alphabet[rng() % alphabet.size()];
    wc[w] += 1 + rng() % 9;
  }
  return wc;
}

}  // namespace

TEST_CASE("learn_bpe worked example") {
  auto m = learn_bpe({{"low", 3}, {"lower", 1}}, 1000);
  REQUIRE(m.merges.size() >= 3);
  CHECK(m.merges[0] == Merge{"l", "o"});
  CHECK(m.merges[1] == Merge{"lo", "w"});
  CHECK(m.merges[2] == Merge{"low", "</w>"});
}

TEST_CASE("learn_bpe stops without repeated pairs") {
  WordCounts wc{{"a", 1}};
  auto m = learn_bpe(wc, count_base_symbols(wc) + kNumReserved);
  CHECK(m.merges.empty());
  CHECK(m.vocab.size() == count_base_symbols(wc) + kNumReserved);
  CHECK(learn_bpe({{"ab", 1}}, 100).merges.empty());
}

TEST_CASE("learn_bpe rejects budgets below the base alphabet") {
  CHECK_THROWS_AS(learn_bpe({{"abc", 4}}, 5), bmtl::ValidationError);
}

TEST_CASE("learn_bpe is deterministic") {
  auto wc = random_corpus(3, 200, "abcdefg");
  CHECK(learn_bpe(wc, 60).merges.serialize() == learn_bpe(wc, 60).merges.serialize());
}

TEST_CASE("learn_bpe matches the textbook algorithm") {
  for (std::uint64_t seed = 1; seed <= 12; ++seed) {
    const auto wc = random_corpus(seed, 40 + seed * 7, seed % 2 ? "abcde" : "abcdefghij");
    for (std::size_t extra : {0, 3, 10, 40, 400}) {
      const std::size_t budget = count_base_symbols(wc) + kNumReserved + extra;
      const auto got = learn_bpe(wc, budget);
      const auto want = naive_bpe(wc, budget);
      CAPTURE(seed);
      CAPTURE(budget);
      REQUIRE(got.merges.size() == want.merges.size());
      for (std::size_t i = 0; i < want.merges.size(); ++i) CHECK(got.merges[i] == want.merges[i]);
      std::set<std::string> vocab;
      for (std::size_t id = kNumReserved; id < got.vocab.size(); ++id) vocab.insert(got.vocab.token(int(id)));
      CHECK(vocab == want.vocab);
      CHECK(got.vocab.size() <= budget);
    }
  }
}

TEST_CASE("segment_word") {
  MergeTable t;
  t.add("l", "o");
  t.add("lo", "w");
  t.add("low", "</w>");
  CHECK(segment_word(t, "low") == std::vector<std::string>{"low</w>"});
  CHECK(segment_word(t, "lowest") == std::vector<std::string>{"low", "e", "s", "t</w>"});
  CHECK(segment_word(MergeTable{}, "ab") == std::vector<std::string>{"a", "b</w>"});
  CHECK(segment_word(MergeTable{}, "é") == std::vector<std::string>{"é</w>"});
}

TEST_CASE("encode_sentence and decode_to_words") {
  MergeTable t;
  t.add("l", "o");
  t.add("lo", "w");
  t.add("low", "</w>");
  SubwordVocabulary v;
  const int low_w = v.add("low</w>");
  const int low = v.add("low");
  const int e = v.add("e");
  const int s = v.add("s");
  const int tw = v.add("t</w>");

  CHECK(encode_sentence(v, t, {}) == std::vector<int>{kBos, kEos});
  CHECK(encode_sentence(v, t, {"low"}) == std::vector<int>{kBos, low_w, kEos});
  const auto unk = encode_sentence(v, t, {"xyz"});
  CHECK(std::find(unk.begin(), unk.end(), kUnk) != unk.end());

  const std::vector<int> a{kBos, low_w, kEos};
  CHECK(decode_to_words(v, a) == std::vector<std::string>{"low"});
  const std::vector<int> b{kBos, low, e, s, tw, kEos};
  CHECK(decode_to_words(v, b) == std::vector<std::string>{"lowest"});
  const std::vector<int> c{kBos, kEos};
  CHECK(decode_to_words(v, c).empty());
  const std::vector<int> bad{kBos, 999};
  CHECK_THROWS_AS(decode_to_words(v, bad), bmtl::DecodeError);
}

TEST_CASE("roundtrip over training words") {
  const auto wc = random_corpus(9, 300, "abcdefghijklmnop");
  const auto m = learn_bpe(wc, 120);
  for (const auto& [w, c] : wc) {
    const auto ids = encode_sentence(m.vocab, m.merges, {w});
    CHECK(std::find(ids.begin(), ids.end(), kUnk) == ids.end());
    CHECK(decode_to_words(m.vocab, ids) == std::vector<std::string>{w});
  }
}

TEST_CASE("merge tables across budgets are prefixes") {
  const auto wc = random_corpus(5, 250, "abcdefgh");
  const auto small = learn_bpe(wc, 40);
  const auto mid = learn_bpe(wc, 80);
  const auto big = learn_bpe(wc, 200);
  CHECK(small.merges.is_prefix_of(mid.merges));
  CHECK(mid.merges.is_prefix_of(big.merges));
  CHECK_FALSE(big.merges.is_prefix_of(small.merges));
}

TEST_CASE("serialisation roundtrip") {
  const auto m = learn_bpe(random_corpus(2, 100, "abcxyz"), 50);
  const auto merges = MergeTable::parse(m.merges.serialize());
  CHECK(merges.merges() == m.merges.merges());
  const auto vocab = SubwordVocabulary::parse(m.vocab.serialize());
  CHECK(vocab.tokens() == m.vocab.tokens());
  CHECK_THROWS(MergeTable::parse("not a merge table\n"));
}
