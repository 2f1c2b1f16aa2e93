#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "bmtl/graph.hpp"
#include "bmtl/optim.hpp"
#include "bmtl/seq2seq.hpp"
#include "bmtl/subword.hpp"

namespace bmtl::training {

enum class LossMode { mean, sum };

LossMode parse_loss_mode(const std::string& name);
std::string loss_mode_name(LossMode mode);

// One training pair: source ids and one target id sequence per decoder.
struct Example {
  std::vector<int> source;
  std::vector<std::vector<int>> targets;
};

struct Batch {
  model::TokenBatch source;
  std::vector<model::TokenBatch> targets;  // per decoder, same row order
  std::vector<std::size_t> indices;        // corpus positions of the rows
};

// Encodes the same target sentence at every granularity.
std::vector<std::vector<int>> segment_targets_multi(const std::vector<std::string>& words,
                                                    std::span<const subword::BpeModel> decoders);

struct ExampleSet {
  std::vector<Example> examples;
  std::vector<std::size_t> kept;  // corpus line of each example
  std::size_t dropped = 0;        // pairs over the length limit
};

// Pairs whose finest target (or source) exceeds max_len subwords are dropped.
ExampleSet build_examples(const std::vector<std::vector<std::string>>& source_words,
                          const std::vector<std::vector<std::string>>& target_words,
                          const subword::BpeModel& source_model, std::span<const subword::BpeModel> decoders,
                          std::size_t max_len = 100);

// Stable sort by source length, consecutive groups of batch_size, group order
// shuffled with `seed`.
std::vector<Batch> make_batches(const std::vector<Example>& corpus, std::size_t batch_size, std::uint64_t seed);

std::size_t batches_per_epoch(std::size_t corpus_size, std::size_t batch_size);

struct NllTotal {
  double total = 0.0;
  std::size_t count = 0;
};

// logits[t] predicts targets[t + 1]; PAD targets are skipped, so BOS is never
// a prediction target and EOS always is.
NllTotal sequence_nll(const std::vector<std::vector<double>>& logits, std::span<const int> targets);

// mean: (1/K) sum_k total_k / count_k. sum: the same without 1/K.
double combine_losses(std::span<const NllTotal> per_decoder, LossMode mode = LossMode::mean);

// Builds the combined loss of a batch on `g`; per-decoder totals are
// reported through `per_decoder` when given.
template <typename T>
typename nn::Graph<T>::Var batch_loss(nn::Graph<T>& g, const model::Seq2Seq<T>& model, const Batch& batch,
                                      model::Dropout* dropout, LossMode mode,
                                      std::vector<NllTotal>* per_decoder = nullptr);

struct TrainConfig {
  nn::AdamConfig adam;
  double clip_norm = 1.0;
  double dropout = 0.1;
  LossMode loss_mode = LossMode::mean;
};

struct StepResult {
  double loss = 0.0;
  double grad_norm = 0.0;  // before clipping
  std::vector<NllTotal> per_decoder;
};

// Forward with dropout, combined loss, backward, clip, Adam; gradients are
// left zeroed. Throws NumericError on a non-finite loss.
StepResult train_step(nn::ParameterStore<float>& store, nn::AdamState<float>& adam,
                      const model::ModelConfig& config, const Batch& batch, const TrainConfig& tc,
                      std::uint64_t dropout_seed);

// Returns the word tokens produced by `decoder` for dev sentence `sentence`.
using Translator = std::function<std::vector<std::string>(std::size_t decoder, std::size_t sentence)>;

// Detruecases and detokenizes both sides, then scores each decoder.
std::vector<double> evaluate_dev(const std::vector<std::vector<std::string>>& references, std::size_t decoders,
                                 const Translator& translate);

// Greedy decoding of every decoder of `model`.
std::vector<double> evaluate_dev(const model::Seq2Seq<float>& model, const std::vector<std::vector<int>>& sources,
                                 const std::vector<std::vector<std::string>>& references,
                                 std::span<const subword::SubwordVocabulary* const> vocabs);

// Stops once the average dev BLEU has not improved for `patience`
// consecutive evaluations.
class EarlyStopper {
 public:
  explicit EarlyStopper(std::size_t patience = 5) : patience_(patience) {}

  // Returns true when this evaluation improved the best average.
  bool observe(std::span<const double> bleu);
  bool should_stop() const { return patience_ > 0 && since_best_ >= patience_; }

  double best_average() const { return best_; }
  std::size_t since_best() const { return since_best_; }
  std::size_t patience() const { return patience_; }
  void restore(double best, std::size_t since_best) {
    best_ = best;
    since_best_ = since_best;
  }

 private:
  std::size_t patience_;
  double best_ = -1.0;
  std::size_t since_best_ = 0;
};

struct EvalRecord {
  std::uint64_t update = 0;
  std::vector<double> bleu;
};

// First evaluated update at which decoder k reached `fraction` of `target`
// BLEU, or 0 when never reached.
std::uint64_t updates_to_fraction(const std::vector<EvalRecord>& history, std::size_t k, double fraction,
                                  double target);

struct AssetRef {
  std::string name;
  std::string path;
  std::uint64_t hash = 0;
};

AssetRef make_asset(std::string name, std::string path);

// Throws HashMismatchError when the file at asset.path no longer matches.
void verify_asset(const AssetRef& asset);

struct TrainerState {
  std::uint64_t update = 0;
  std::vector<double> best_bleu;  // per decoder
  double best_average = -1.0;
  std::uint64_t best_update = 0;
  std::size_t evals_since_best = 0;
  std::vector<EvalRecord> history;
};

struct Checkpoint {
  model::ModelConfig config;
  std::vector<AssetRef> assets;
  nn::ParameterStore<float> params;
  nn::ParameterStore<float> best_params;  // empty until the first evaluation
  nn::AdamState<float> adam;
  TrainerState state;
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);

// Throws TruncatedFileError, VersionMismatchError or, when verify_assets is
// set, HashMismatchError for a changed vocabulary or merge file.
Checkpoint load_checkpoint(const std::string& path, bool verify_assets = true);

// Model configuration as archive metadata.
void put_model_config(const model::ModelConfig& config, nn::Archive& archive);
model::ModelConfig get_model_config(const nn::Archive& archive);

struct TrainerOptions {
  TrainConfig train;
  std::size_t batch_size = 32;
  std::size_t max_updates = 10000;
  std::size_t eval_every = 500;
  std::size_t patience = 5;
  double lr_decay = 1.0;  // learning rate multiplier per epoch
  std::uint64_t seed = 1;
};

struct DevSet {
  std::vector<std::vector<int>> sources;
  std::vector<std::vector<std::string>> references;  // truecased tokens
  std::vector<const subword::SubwordVocabulary*> vocabs;  // per decoder
};

// Training loop: batches come from a per-epoch shuffle seeded from the master
// seed, dropout masks from a per-update seed, so a resumed run retraces an
// uninterrupted one exactly.
class Trainer {
 public:
  Trainer(model::ModelConfig config, std::vector<Example> train, DevSet dev, TrainerOptions options,
          std::vector<AssetRef> assets = {});

  // Fresh parameters from the "init" substream.
  void initialize();
  void resume(const Checkpoint& ckpt);

  // One update; writes "update<TAB>loss" to `log` when given.
  StepResult step(std::ostream* log = nullptr);
  // Dev evaluation; writes "eval<TAB>update<TAB>decoder<TAB>bleu" lines.
  std::vector<double> evaluate(std::ostream* log = nullptr);
  // Trains until max_updates or early stopping.
  void run(std::ostream* log = nullptr);

  bool finished() const;
  const TrainerState& state() const { return state_; }
  const model::ModelConfig& config() const { return config_; }
  const nn::ParameterStore<float>& params() const { return params_; }
  nn::ParameterStore<float>& params() { return params_; }
  // Parameters of the best evaluation (current ones before any evaluation).
  const nn::ParameterStore<float>& best_params() const;
  Checkpoint checkpoint() const;

 private:
  const std::vector<Batch>& epoch_batches(std::uint64_t epoch);

  model::ModelConfig config_;
  std::vector<Example> train_;
  DevSet dev_;
  TrainerOptions options_;
  std::vector<AssetRef> assets_;
  nn::ParameterStore<float> params_;
  nn::ParameterStore<float> best_params_;
  nn::AdamState<float> adam_;
  TrainerState state_;
  EarlyStopper stopper_;
  std::uint64_t cached_epoch_ = static_cast<std::uint64_t>(-1);
  std::vector<Batch> cached_batches_;
};

}  // namespace bmtl::training
