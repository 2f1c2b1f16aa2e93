#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "bmtl/graph.hpp"
#include "bmtl/tensor.hpp"

// Attention encoder-decoder with a shared BiGRU encoder and K conditional-GRU
// decoders, one per target granularity.
namespace bmtl::model {

struct DecoderSpec {
  std::string name;
  std::size_t vocab_size = 0;
};

struct ModelConfig {
  std::size_t embedding_dim = 512;
  std::size_t encoder_hidden = 512;  // per direction
  std::size_t encoder_layers = 2;
  std::size_t decoder_hidden = 1024;
  double dropout = 0.1;
  std::size_t source_vocab_size = 0;
  std::vector<DecoderSpec> decoders;

  void validate() const;
  std::size_t decoder_index(const std::string& name) const;
  // Single-decoder (baseline) configuration for decoder k.
  ModelConfig single(std::size_t k) const;
  std::size_t context_dim() const { return 2 * encoder_hidden; }
};

struct ParameterCounts {
  struct Decoder {
    std::string name;
    std::size_t embedding = 0;
    std::size_t init = 0;
    std::size_t gru1 = 0;
    std::size_t attention = 0;
    std::size_t gru2 = 0;
    std::size_t output = 0;
    std::size_t total = 0;
  };
  std::size_t source_embedding = 0;
  std::size_t encoder = 0;
  std::vector<Decoder> decoders;
  std::size_t total = 0;

  std::size_t shared() const { return source_embedding + encoder; }
};

// Closed-form trainable-parameter counts.
ParameterCounts count_parameters(const ModelConfig& config);

// Allocates every parameter: Glorot-uniform matrices, zero biases, drawn from
// a generator seeded with `seed` in allocation order.
template <typename T>
void allocate_parameters(const ModelConfig& config, nn::ParameterStore<T>& store, std::uint64_t seed);

// Right-padded id matrix (PAD = 0), one row per sentence.
struct TokenBatch {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<int> ids;
  std::vector<std::size_t> lengths;

  static TokenBatch from(const std::vector<std::vector<int>>& sequences);
  int at(std::size_t r, std::size_t c) const { return ids[r * cols + c]; }
  std::vector<int> column(std::size_t c) const;
  template <typename T>
  nn::Matrix<T> mask() const;
};

// Inverted-dropout source: keep probability 1 - p, kept values scaled by
// 1 / (1 - p). A null Dropout pointer disables it.
struct Dropout {
  double p = 0.0;
  std::mt19937_64 rng;

  Dropout(double prob, std::uint64_t seed) : p(prob), rng(seed) {}
  template <typename T>
  nn::Matrix<T> mask(Eigen::Index rows, Eigen::Index cols);
};

template <typename T>
class Seq2Seq {
 public:
  using Graph = nn::Graph<T>;
  using Var = typename Graph::Var;

  struct Encoded {
    std::vector<Var> states;  // per position, rows x 2h
    nn::Matrix<T> mask;       // rows x positions
  };

  struct Attention {
    const Encoded* encoded = nullptr;
    std::vector<Var> keys;  // U_a e_j, per position
  };

  struct Step {
    Var hidden;
    Var context;
    Var logits;
    nn::Matrix<T> alpha;
  };

  // Parameters are looked up by name; `store` must outlive the model and not
  // grow while it is in use.
  Seq2Seq(ModelConfig config, const nn::ParameterStore<T>& store);

  const ModelConfig& config() const { return config_; }

  Encoded encode(Graph& g, const TokenBatch& source, Dropout* dropout) const;
  // Encoder states given directly (inference on a cached encoding).
  Encoded wrap(Graph& g, const std::vector<nn::Matrix<T>>& states, const nn::Matrix<T>& mask) const;
  Attention attention_keys(Graph& g, std::size_t k, const Encoded& enc) const;
  Var initial_state(Graph& g, std::size_t k, const Encoded& enc) const;
  Step step(Graph& g, std::size_t k, const Attention& att, Var prev_hidden, std::span<const int> prev_tokens,
            Dropout* dropout) const;
  // Teacher forcing: element t holds the logits predicting targets column t+1.
  std::vector<Var> teacher_forced(Graph& g, std::size_t k, const Attention& att, const TokenBatch& targets,
                                  Dropout* dropout) const;

 private:
  struct Gru {
    const nn::Parameter<T>* w = nullptr;     // in x 3h (z, r, candidate)
    const nn::Parameter<T>* u_zr = nullptr;  // h x 2h
    const nn::Parameter<T>* u_h = nullptr;   // h x h
    const nn::Parameter<T>* b = nullptr;     // 1 x 3h
    Eigen::Index hidden = 0;
  };
  struct Decoder {
    const nn::Parameter<T>* embedding;
    const nn::Parameter<T>* init_w;
    const nn::Parameter<T>* init_b;
    Gru gru1;
    const nn::Parameter<T>* att_w;
    const nn::Parameter<T>* att_u;
    const nn::Parameter<T>* att_v;
    Gru gru2;
    const nn::Parameter<T>* out_s;
    const nn::Parameter<T>* out_c;
    const nn::Parameter<T>* out_e;
    const nn::Parameter<T>* out_b;
    const nn::Parameter<T>* out_w;
    const nn::Parameter<T>* out_wb;
  };

  Gru bind_gru(const nn::ParameterStore<T>& store, const std::string& prefix, std::size_t hidden) const;
  Var gru_input(Graph& g, const Gru& cell, Var x) const;
  Var gru_cell(Graph& g, const Gru& cell, Var projected_input, Var h) const;

  ModelConfig config_;
  const nn::Parameter<T>* source_embedding_;
  std::vector<std::array<Gru, 2>> encoder_;  // per layer: forward, backward
  std::vector<Decoder> decoders_;
};

// Single-sentence views of the model operations.

template <typename T>
struct EncoderOutput {
  nn::Matrix<T> states;  // positions x 2h
  std::vector<bool> mask;
};

template <typename T>
struct DecoderState {
  nn::Matrix<T> hidden;   // 1 x decoder_hidden
  nn::Matrix<T> context;  // 1 x 2h
  int last_token = 0;
};

template <typename T>
EncoderOutput<T> encode_source(const ModelConfig& config, const nn::ParameterStore<T>& store,
                               std::span<const int> source_ids);

// MLP attention weights of decoder k for the given query state.
template <typename T>
std::vector<T> attention_weights(const ModelConfig& config, const nn::ParameterStore<T>& store, std::size_t k,
                                 const nn::Matrix<T>& query, const EncoderOutput<T>& enc);

template <typename T>
DecoderState<T> initial_decoder_state(const ModelConfig& config, const nn::ParameterStore<T>& store, std::size_t k,
                                      const EncoderOutput<T>& enc);

// One conditional-GRU step consuming state.last_token; returns the next
// state (last_token unchanged) and the logits over the target vocabulary.
template <typename T>
std::pair<DecoderState<T>, std::vector<T>> conditional_gru_step(const ModelConfig& config,
                                                                const nn::ParameterStore<T>& store, std::size_t k,
                                                                const DecoderState<T>& prev,
                                                                const EncoderOutput<T>& enc);

// Encodes once and runs every decoder with teacher forcing on its own target.
// Returns, per decoder in configuration order, a (target length - 1) x V
// logit matrix. Throws ValidationError naming a decoder without a target.
template <typename T>
std::vector<nn::Matrix<T>> bmtl_forward(const ModelConfig& config, const nn::ParameterStore<T>& store,
                                        std::span<const int> source_ids,
                                        const std::map<std::string, std::vector<int>>& targets);

}  // namespace bmtl::model
