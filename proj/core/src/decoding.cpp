#include "bmtl/decoding.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "bmtl/error.hpp"
#include "bmtl/util.hpp"

namespace bmtl::decoding {

using subword::kBos;
using subword::kEos;
using subword::kPad;

NeuralStepModel::NeuralStepModel(const model::Seq2Seq<float>& model, std::size_t k, std::span<const int> source_ids)
    : model_(model), k_(k) {
  nn::Graph<float> g(false);
  auto enc = model_.encode(g, model::TokenBatch::from({std::vector<int>(source_ids.begin(), source_ids.end())}), nullptr);
  auto att = model_.attention_keys(g, k_, enc);
  for (std::size_t j = 0; j < enc.states.size(); ++j) {
    states_.push_back(g.value(enc.states[j]));
    keys_.push_back(g.value(att.keys[j]));
  }
}

std::size_t NeuralStepModel::vocab_size() const { return model_.config().decoders.at(k_).vocab_size; }

int NeuralStepModel::initial_state() {
  nn::Graph<float> g(false);
  auto enc = model_.wrap(g, states_, nn::Matrix<float>::Ones(1, static_cast<Eigen::Index>(states_.size())));
  hidden_.push_back(g.value(model_.initial_state(g, k_, enc)));
  return static_cast<int>(hidden_.size() - 1);
}

auto NeuralStepModel::advance(std::span<const int> states, std::span<const int> tokens) -> std::vector<Expansion> {
  const auto rows = static_cast<Eigen::Index>(states.size());
  if (rows == 0) return {};
  nn::Graph<float> g(false);
  model::Seq2Seq<float>::Encoded enc;
  enc.mask = nn::Matrix<float>::Ones(rows, static_cast<Eigen::Index>(states_.size()));
  model::Seq2Seq<float>::Attention att;
  att.encoded = &enc;
  for (std::size_t j = 0; j < states_.size(); ++j) {
    enc.states.push_back(g.constant(states_[j].replicate(rows, 1)));
    att.keys.push_back(g.constant(keys_[j].replicate(rows, 1)));
  }
  nn::Matrix<float> prev(rows, hidden_.at(static_cast<std::size_t>(states[0])).cols());
  for (Eigen::Index r = 0; r < rows; ++r) prev.row(r) = hidden_.at(static_cast<std::size_t>(states[r]));
  auto step = model_.step(g, k_, att, g.constant(std::move(prev)), tokens, nullptr);
  const auto& h = g.value(step.hidden);
  const auto& logits = g.value(step.logits);
  std::vector<Expansion> out(states.size());
  for (Eigen::Index r = 0; r < rows; ++r) {
    hidden_.push_back(h.row(r));
    auto& e = out[static_cast<std::size_t>(r)];
    e.state = static_cast<int>(hidden_.size() - 1);
    const auto row = logits.row(r).cast<double>();
    const double top = row.maxCoeff();
    const double lse = top + std::log((row.array() - top).exp().sum());
    e.log_probs.resize(static_cast<std::size_t>(row.size()));
    for (Eigen::Index v = 0; v < row.size(); ++v) {
      e.log_probs[static_cast<std::size_t>(v)] = row(v) - lse;
      if (!std::isfinite(e.log_probs[static_cast<std::size_t>(v)])) throw NumericError("non-finite decoder output");
    }
  }
  return out;
}

std::size_t default_max_len(std::size_t source_length) { return 3 * source_length + 10; }

double length_normalize(double score, std::size_t length, double alpha) {
  if (length == 0) return score;
  return score / std::pow(static_cast<double>(length), alpha);
}

namespace {

bool emittable(int token) { return token != kPad && token != kBos; }

Hypothesis finish(std::vector<int> ids, double score, bool truncated, double alpha) {
  Hypothesis h;
  h.ids = std::move(ids);
  if (truncated) h.ids.push_back(kEos);
  h.score = score;
  h.truncated = truncated;
  h.normalized = length_normalize(score, h.length(), alpha);
  return h;
}

// Better = higher normalized score, then lexicographically smaller ids.
bool better(const Hypothesis& a, const Hypothesis& b) {
  if (a.normalized != b.normalized) return a.normalized > b.normalized;
  return a.ids < b.ids;
}

}  // namespace

Hypothesis greedy_decode(StepModel& scorer, std::size_t max_len, double length_alpha) {
  if (max_len == 0) throw ValidationError("greedy_decode: max_len must be positive");
  std::vector<int> ids{kBos};
  int state = scorer.initial_state();
  double score = 0.0;
  for (std::size_t t = 0; t < max_len; ++t) {
    const int prev = ids.back();
    auto exp = scorer.advance(std::span<const int>(&state, 1), std::span<const int>(&prev, 1));
    const auto& lp = exp.at(0).log_probs;
    int best = -1;
    for (int v = 0; v < static_cast<int>(lp.size()); ++v) {
      if (emittable(v) && (best < 0 || lp[static_cast<std::size_t>(v)] > lp[static_cast<std::size_t>(best)])) best = v;
    }
    if (best < 0) throw ValidationError("greedy_decode: vocabulary has no emittable token");
    ids.push_back(best);
    score += lp[static_cast<std::size_t>(best)];
    state = exp[0].state;
    if (best == kEos) return finish(std::move(ids), score, false, length_alpha);
  }
  return finish(std::move(ids), score, true, length_alpha);
}

Hypothesis beam_search_decode(StepModel& scorer, std::size_t beam_size, std::size_t max_len, double length_alpha) {
  if (beam_size == 0) throw ValidationError("beam_search_decode: beam_size must be at least 1");
  if (max_len == 0) throw ValidationError("beam_search_decode: max_len must be positive");
  struct Live {
    std::vector<int> ids;
    double score;
    int state;
  };
  struct Candidate {
    std::size_t parent;
    int token;
    double score;
  };
  std::vector<Live> live{{{kBos}, 0.0, scorer.initial_state()}};
  std::vector<Hypothesis> finished;

  for (std::size_t t = 0; t < max_len && !live.empty(); ++t) {
    std::vector<int> states, tokens;
    for (const auto& l : live) {
      states.push_back(l.state);
      tokens.push_back(l.ids.back());
    }
    auto exps = scorer.advance(states, tokens);
    std::vector<Candidate> cands;
    for (std::size_t i = 0; i < live.size(); ++i) {
      const auto& lp = exps[i].log_probs;
      for (int v = 0; v < static_cast<int>(lp.size()); ++v) {
        if (emittable(v)) cands.push_back({i, v, live[i].score + lp[static_cast<std::size_t>(v)]});
      }
    }
    // Ranking by raw score, ties by the extended id sequence; parents are
    // kept in lexicographic order so (parent, token) order matches it.
    const std::size_t keep = std::min(beam_size, cands.size());
    std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(keep), cands.end(),
                      [&](const Candidate& a, const Candidate& b) {
                        if (a.score != b.score) return a.score > b.score;
                        if (a.parent != b.parent) return live[a.parent].ids < live[b.parent].ids;
                        return a.token < b.token;
                      });
    std::vector<Live> next;
    for (std::size_t c = 0; c < keep; ++c) {
      const auto& cand = cands[c];
      auto ids = live[cand.parent].ids;
      ids.push_back(cand.token);
      if (cand.token == kEos) {
        finished.push_back(finish(std::move(ids), cand.score, false, length_alpha));
      } else {
        next.push_back({std::move(ids), cand.score, exps[cand.parent].state});
      }
    }
    std::sort(next.begin(), next.end(), [](const Live& a, const Live& b) { return a.ids < b.ids; });
    live = std::move(next);
  }
  for (auto& l : live) finished.push_back(finish(std::move(l.ids), l.score, true, length_alpha));
  return *std::min_element(finished.begin(), finished.end(), better);
}

Hypothesis greedy_decode(const model::Seq2Seq<float>& model, const std::string& decoder, std::span<const int> source_ids,
                         std::size_t max_len) {
  const std::size_t k = model.config().decoder_index(decoder);
  NeuralStepModel scorer(model, k, source_ids);
  auto h = greedy_decode(scorer, max_len ? max_len : default_max_len(source_ids.size()));
  h.decoder = decoder;
  return h;
}

Hypothesis beam_search_decode(const model::Seq2Seq<float>& model, const std::string& decoder,
                              std::span<const int> source_ids, const SearchParams& params) {
  const std::size_t k = model.config().decoder_index(decoder);
  NeuralStepModel scorer(model, k, source_ids);
  const std::size_t max_len = params.max_len ? params.max_len : default_max_len(source_ids.size());
  auto h = params.beam_size == 1 ? greedy_decode(scorer, max_len, params.length_alpha)
                                 : beam_search_decode(scorer, params.beam_size, max_len, params.length_alpha);
  h.decoder = decoder;
  return h;
}

Translation translate_corpus(const model::Seq2Seq<float>& model, const std::string& decoder,
                             const subword::SubwordVocabulary& target_vocab,
                             const std::vector<std::vector<int>>& sources, const SearchParams& params) {
  const std::size_t k = model.config().decoder_index(decoder);
  if (target_vocab.size() != model.config().decoders[k].vocab_size) {
    throw ValidationError("decoder '" + decoder + "' vocabulary size does not match the model");
  }
  Translation out;
  for (const auto& src : sources) {
    auto h = beam_search_decode(model, decoder, src, params);
    out.lines.push_back(join(subword::decode_to_words(target_vocab, h.ids), " "));
    out.hypotheses.push_back(std::move(h));
  }
  return out;
}

void write_translation(const Translation& translation, const std::string& path, const std::string& score_path) {
  write_lines(path, translation.lines);
  if (score_path.empty()) return;
  std::vector<std::string> rows;
  for (std::size_t i = 0; i < translation.hypotheses.size(); ++i) {
    std::ostringstream os;
    os.precision(9);
    os << i + 1 << '\t' << translation.hypotheses[i].normalized;
    rows.push_back(os.str());
  }
  write_lines(score_path, rows);
}

}  // namespace bmtl::decoding
