#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "bmtl/seq2seq.hpp"
#include "bmtl/subword.hpp"

namespace bmtl::decoding {

struct Hypothesis {
  std::vector<int> ids;  // BOS ... EOS
  double score = 0.0;    // sum of log-probabilities
  double normalized = 0.0;
  std::string decoder;
  bool truncated = false;  // EOS was appended at max_len

  // Tokens after BOS, EOS included.
  std::size_t length() const { return ids.empty() ? 0 : ids.size() - 1; }
};

// Incremental scorer for one source sentence. States are opaque ids handed
// out by the model; advance() scores one next-token distribution per
// (state, token) pair and returns the successor states.
class StepModel {
 public:
  struct Expansion {
    int state = 0;
    std::vector<double> log_probs;
  };

  virtual ~StepModel() = default;
  virtual std::size_t vocab_size() const = 0;
  virtual int initial_state() = 0;
  virtual std::vector<Expansion> advance(std::span<const int> states, std::span<const int> tokens) = 0;
};

// Neural scorer for decoder k; the encoder runs once on construction.
class NeuralStepModel : public StepModel {
 public:
  NeuralStepModel(const model::Seq2Seq<float>& model, std::size_t k, std::span<const int> source_ids);

  std::size_t vocab_size() const override;
  int initial_state() override;
  std::vector<Expansion> advance(std::span<const int> states, std::span<const int> tokens) override;

 private:
  const model::Seq2Seq<float>& model_;
  std::size_t k_;
  std::vector<nn::Matrix<float>> states_;  // per position, 1 x 2h
  std::vector<nn::Matrix<float>> keys_;    // per position, 1 x dh
  std::vector<nn::Matrix<float>> hidden_;  // by state id
};

std::size_t default_max_len(std::size_t source_length);

double length_normalize(double score, std::size_t length, double alpha);

struct SearchParams {
  std::size_t beam_size = 4;
  double length_alpha = 1.0;
  std::size_t max_len = 0;  // 0: default_max_len(source length)
};

// Argmax decoding; PAD and BOS are never emitted. After max_len tokens
// without EOS, EOS is appended (contributing no score) and the hypothesis
// is flagged truncated.
Hypothesis greedy_decode(StepModel& scorer, std::size_t max_len, double length_alpha = 1.0);

// Beam search over log-probabilities. A candidate ending in EOS leaves the
// beam as finished; search continues until no live hypothesis remains or
// max_len is reached, where live hypotheses are closed with EOS. The best
// finished hypothesis by score / length^alpha is returned; ties go to the
// lexicographically smaller id sequence.
Hypothesis beam_search_decode(StepModel& scorer, std::size_t beam_size, std::size_t max_len, double length_alpha);

Hypothesis greedy_decode(const model::Seq2Seq<float>& model, const std::string& decoder, std::span<const int> source_ids,
                         std::size_t max_len = 0);
Hypothesis beam_search_decode(const model::Seq2Seq<float>& model, const std::string& decoder,
                              std::span<const int> source_ids, const SearchParams& params);

struct Translation {
  std::vector<Hypothesis> hypotheses;
  std::vector<std::string> lines;  // space-joined words, one per source
};

// Decodes each source (beam_size 1 is greedy) and maps ids back to words.
Translation translate_corpus(const model::Seq2Seq<float>& model, const std::string& decoder,
                             const subword::SubwordVocabulary& target_vocab,
                             const std::vector<std::vector<int>>& sources, const SearchParams& params);

// Hypothesis file plus the optional "line<TAB>normalized_score" sidecar.
void write_translation(const Translation& translation, const std::string& path, const std::string& score_path = "");

}  // namespace bmtl::decoding
