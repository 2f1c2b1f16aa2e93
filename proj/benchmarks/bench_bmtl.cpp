#include <benchmark/benchmark.h>

#include <random>

#include "bmtl/bleu.hpp"
#include "bmtl/combine.hpp"
#include "bmtl/decoding.hpp"
#include "bmtl/optim.hpp"
#include "bmtl/seq2seq.hpp"
#include "bmtl/subword.hpp"
#include "bmtl/toy.hpp"
#include "bmtl/training.hpp"
#include "bmtl/util.hpp"

using namespace bmtl;

namespace {

// Toy-sized model: the shapes used by the bundled configuration.
model::ModelConfig toy_model(std::size_t decoders) {
  model::ModelConfig c;
  c.embedding_dim = 32;
  c.encoder_hidden = 32;
  c.encoder_layers = 1;
  c.decoder_hidden = 64;
  c.dropout = 0.1;
  c.source_vocab_size = 90;
  const std::size_t sizes[] = {40, 60, 90};
  for (std::size_t k = 0; k < decoders; ++k) c.decoders.push_back({"d" + std::to_string(k), sizes[k % 3]});
  return c;
}

std::vector<training::Example> random_examples(const model::ModelConfig& c, std::size_t n, std::size_t len) {
  std::mt19937_64 rng(1);
  auto seq = [&](std::size_t vocab) {
    std::vector<int> s{subword::kBos};
    for (std::size_t i = 0; i < len; ++i) s.push_back(subword::kNumReserved + int(rng() % (vocab - subword::kNumReserved)));
    s.push_back(subword::kEos);
    return s;
  };
  std::vector<training::Example> out;
  for (std::size_t i = 0; i < n; ++i) {
    training::Example e{seq(c.source_vocab_size), {}};
    for (const auto& d : c.decoders) e.targets.push_back(seq(d.vocab_size));
    out.push_back(std::move(e));
  }
  return out;
}

void BM_TrainStep(benchmark::State& state) {
  const auto c = toy_model(static_cast<std::size_t>(state.range(0)));
  nn::ParameterStore<float> s;
  model::allocate_parameters(c, s, 1);
  training::TrainConfig tc;
  auto adam = nn::AdamState<float>::zeros_like(s, tc.adam);
  const auto batch = training::make_batches(random_examples(c, 32, 12), 32, 0).at(0);
  std::uint64_t update = 0;
  for (auto _ : state) benchmark::DoNotOptimize(training::train_step(s, adam, c, batch, tc, ++update).loss);
}
BENCHMARK(BM_TrainStep)->Arg(1)->Arg(3)->Unit(benchmark::kMillisecond);

void BM_BeamSearch(benchmark::State& state) {
  const auto c = toy_model(1);
  nn::ParameterStore<float> s;
  model::allocate_parameters(c, s, 2);
  model::Seq2Seq<float> m(c, s);
  const auto src = random_examples(c, 1, 15).at(0).source;
  decoding::SearchParams p{static_cast<std::size_t>(state.range(0)), 1.0, 30};
  for (auto _ : state) benchmark::DoNotOptimize(decoding::beam_search_decode(m, "d0", src, p).score);
}
BENCHMARK(BM_BeamSearch)->Arg(1)->Arg(4)->Arg(12)->Unit(benchmark::kMillisecond);

void BM_LearnBpe(benchmark::State& state) {
  toy::ToyOptions opt;
  opt.lexicon_size = 400;
  const auto text = toy::generate(2000, opt, 0);
  std::vector<std::vector<std::string>> corpus;
  for (const auto& line : text.target) corpus.push_back(split_whitespace(line));
  const auto counts = subword::count_words(corpus);
  for (auto _ : state) {
    benchmark::DoNotOptimize(subword::learn_bpe(counts, static_cast<std::size_t>(state.range(0))).merges.size());
  }
}
BENCHMARK(BM_LearnBpe)->Arg(200)->Arg(1000)->Unit(benchmark::kMillisecond);

void BM_Combine(benchmark::State& state) {
  const combine::Words a = split_whitespace("the quick brown fox jumps over the lazy dog today");
  const combine::Words b = split_whitespace("a quick brown fox jumped over the lazy dogs today");
  const combine::Words c = split_whitespace("the quick fox jumps over a lazy dog this day");
  const auto lm = combine::train_lm({a, b, c, split_whitespace("the dog sleeps")}, 3);
  combine::HypothesisSet set{{a, b, c}, {}};
  combine::CombineParams p;
  p.radius = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) {
    const auto g = combine::AlignmentGraph::build(set.hypotheses);
    benchmark::DoNotOptimize(combine::combine(set, g, lm, p).score);
  }
}
BENCHMARK(BM_Combine)->Arg(0)->Arg(3)->Unit(benchmark::kMillisecond);

void BM_CorpusBleu(benchmark::State& state) {
  toy::ToyOptions opt;
  const auto ref = toy::generate(1000, opt, 1).target;
  auto hyp = ref;
  std::mt19937_64 rng(3);
  for (auto& h : hyp)
    if (rng() % 3 == 0) h = toy::generate(1, opt, rng()).target[0];
  for (auto _ : state) benchmark::DoNotOptimize(bleu::corpus_bleu(hyp, ref).bleu);
}
BENCHMARK(BM_CorpusBleu)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
