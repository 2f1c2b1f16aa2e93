#include <doctest.h>

#include <cmath>

#include "bmtl/bleu.hpp"
#include "bmtl/error.hpp"
#include "bmtl/util.hpp"

using namespace bmtl::bleu;

TEST_CASE("identical corpora score 100") {
  auto r = corpus_bleu({"the cat sat", "a b c d e"}, {"the cat sat", "a b c d e"});
  CHECK(r.bleu == doctest::Approx(100.0));
  CHECK(r.brevity_penalty == 1.0);
}

TEST_CASE("clipped precisions of the textbook pair") {
  auto r = corpus_bleu({"the cat sat on the mat"}, {"the cat sat on a mat"});
  CHECK(r.precisions[0] == doctest::Approx(5.0 / 6));
  CHECK(r.precisions[1] == doctest::Approx(3.0 / 5));
  CHECK(r.precisions[2] == doctest::Approx(2.0 / 4));
  CHECK(r.precisions[3] == doctest::Approx(1.0 / 3));
  CHECK(r.brevity_penalty == 1.0);
  CHECK(r.bleu == doctest::Approx(53.73).epsilon(0.0001));
  CHECK(r.format() == "BLEU = 53.73 83.3/60.0/50.0/33.3 (BP=1.000, hyp_len=6, ref_len=6)");
}

TEST_CASE("short hypothesis drops empty orders") {
  auto r = corpus_bleu({"the cat"}, {"the cat on the mat"});
  CHECK(r.brevity_penalty == doctest::Approx(std::exp(-1.5)));
  CHECK(r.precisions[0] == 1.0);
  CHECK(r.precisions[1] == 1.0);
  CHECK(r.bleu == doctest::Approx(100.0 * std::exp(-1.5)));
}

TEST_CASE("zero matches are floored, not fatal") {
  auto r = corpus_bleu({"a b c d"}, {"a x y z"});
  // p1 = 1/4, the other orders floor at 0.1 / t.
  const double want = 100.0 * std::exp((std::log(0.25) + std::log(0.1 / 3) + std::log(0.1 / 2) + std::log(0.1)) / 4);
  CHECK(r.bleu == doctest::Approx(want));
}

TEST_CASE("empty hypotheses score 0") {
  CHECK(corpus_bleu({""}, {"a b"}).bleu == 0.0);
}

TEST_CASE("clipping at reference counts") {
  auto s = sentence_stats({"the", "the", "the"}, {"the", "cat"});
  CHECK(s.matches[0] == 1);
  CHECK(s.totals[0] == 3);
}

TEST_CASE("tokenisation is applied to both sides") {
  CHECK(corpus_bleu({"Hello, world!"}, {"Hello , world !"}).bleu == doctest::Approx(100.0));
}

TEST_CASE("errors") {
  CHECK_THROWS_AS(corpus_bleu({"a"}, {"a", "b"}), bmtl::ValidationError);
  CHECK_THROWS_AS(corpus_bleu({}, {}), bmtl::ValidationError);
}

TEST_CASE("stats accumulate") {
  NgramStats a = sentence_stats({"a", "b"}, {"a", "b"});
  a += sentence_stats({"c"}, {"d"});
  CHECK(a.matches[0] == 2);
  CHECK(a.totals[0] == 3);
  CHECK(a.hyp_len == 3);
  CHECK(a.ref_len == 3);
}
