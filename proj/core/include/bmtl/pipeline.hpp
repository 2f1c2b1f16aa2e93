#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "bmtl/combine.hpp"
#include "bmtl/decoding.hpp"
#include "bmtl/seq2seq.hpp"
#include "bmtl/subword.hpp"
#include "bmtl/textpipe.hpp"
#include "bmtl/training.hpp"

// Experiment configuration and the end-to-end run: preprocess, segment,
// train, translate per decoder, combine, score.
namespace bmtl::pipeline {

struct ExperimentConfig {
  std::string base_dir = ".";  // relative paths resolve against this

  std::string train_src, train_tgt, dev_src, dev_tgt, test_src, test_tgt;
  std::string output_dir = "out";

  std::size_t src_bpe = 10000;
  std::vector<std::size_t> tgt_bpe{300, 1000, 10000};

  std::size_t emb_dim = 512;
  std::size_t enc_hidden = 512;
  std::size_t enc_layers = 2;
  std::size_t dec_hidden = 1024;
  double dropout = 0.1;

  double learning_rate = 1e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double lr_decay = 1.0;
  std::size_t batch_size = 32;
  double clip_norm = 1.0;
  std::size_t max_updates = 100000;
  std::size_t eval_every = 1000;
  std::size_t patience = 5;
  std::size_t max_len = 100;
  std::string loss_mode = "mean";

  std::size_t beam_size = 4;
  double length_alpha = 1.0;

  std::size_t combine_beam = 32;
  std::size_t combine_radius = 3;
  std::size_t lm_order = 3;
  std::vector<double> lm_lambdas{0.5, 0.3, 0.15, 0.05};
  double w_lm = 1.0;
  double w_sys = 1.0;
  double w_len = 0.0;

  std::uint64_t seed = 1;
  bool baselines = true;
  bool report_train_bleu = false;

  // Flat "key = value" lines, '#' comments. Unknown keys, malformed values
  // and duplicates raise ValidationError naming the key and line.
  static ExperimentConfig parse(std::string_view text, std::string base_dir = ".");
  static ExperimentConfig load(const std::string& path);
  void set(const std::string& key, const std::string& value);

  // Throws ValidationError naming the offending field. Corpus paths are
  // only checked (present and existing) with check_files.
  void validate(bool check_files = true) const;

  std::string resolve(const std::string& path) const;
  std::string out(const std::string& relative) const;

  // Canonical key=value dump, one line per key in a fixed order.
  std::string canonical() const;
  static const std::vector<std::string>& keys();

  std::vector<std::string> decoder_names() const;
  model::ModelConfig model_config(std::size_t source_vocab, const std::vector<std::size_t>& target_vocabs) const;
  training::TrainerOptions trainer_options() const;
  decoding::SearchParams search_params() const;
  combine::CombineParams combine_params() const;
};

// "key=value" run manifest.
void write_manifest(const std::string& path, const std::vector<std::pair<std::string, std::string>>& entries);

// Normalises and tokenises a raw file. Throws DecodeError with the line number.
std::vector<textpipe::Tokens> read_raw(const std::string& path);
// One tokenised sentence per line.
std::vector<textpipe::Tokens> read_tokenized(const std::string& path);
void write_tokenized(const std::string& path, const std::vector<textpipe::Tokens>& corpus);

struct Corpus {
  std::vector<textpipe::Tokens> train_src, train_tgt, dev_src, dev_tgt, test_src, test_tgt;
};

// Writes prep/{train,dev,test}.{src,tgt} and prep/truecase.{src,tgt}.
Corpus preprocess(const ExperimentConfig& cfg);
Corpus load_preprocessed(const ExperimentConfig& cfg);

struct SubwordAssets {
  subword::BpeModel source;
  std::vector<subword::BpeModel> targets;
  std::vector<training::AssetRef> refs;  // files behind the models
};

// Learns source and per-decoder target BPE models under bpe/.
SubwordAssets learn_subwords(const ExperimentConfig& cfg, const Corpus& corpus);
SubwordAssets load_subwords(const ExperimentConfig& cfg);

void save_bpe(const subword::BpeModel& model, const std::string& prefix);
subword::BpeModel load_bpe(const std::string& prefix);

struct TrainedSystem {
  std::string label;
  std::vector<std::size_t> decoders;  // indices into cfg.tgt_bpe
  training::Checkpoint checkpoint;
  std::string checkpoint_path;
  std::string log_path;
};

// Trains one system (all decoders for "bmtl", one for a baseline), writing
// models/<label>.ckpt and logs/<label>.log. With `resume`, training continues
// from an existing checkpoint and the log is extended.
TrainedSystem train_system(const ExperimentConfig& cfg, const Corpus& corpus, const SubwordAssets& assets,
                           const std::string& label, const std::vector<std::size_t>& decoders,
                           std::ostream* progress = nullptr, bool resume = false);

// "bmtl" or "baseline.<decoder name>" to decoder indices.
std::vector<std::size_t> system_decoders(const ExperimentConfig& cfg, const std::string& label);

struct DecoderResult {
  std::string name;
  double dev_bleu = 0.0;    // at the selected checkpoint
  double test_bleu = 0.0;
  double train_bleu = -1.0;  // -1 when not computed
  std::uint64_t updates_to_95 = 0;
  std::uint64_t updates_to_best = 0;  // first evaluation reaching this decoder's best dev BLEU
  std::string hypothesis_path;
};

struct SystemResult {
  std::string label;
  std::size_t parameters = 0;
  std::uint64_t updates = 0;
  std::uint64_t best_update = 0;
  std::vector<DecoderResult> decoders;
};

struct Report {
  SystemResult bmtl;
  std::vector<SystemResult> baselines;
  double combined_bleu = 0.0;
  std::string combined_path;
  std::size_t baseline_parameters = 0;

  double parameter_reduction() const;
  std::string text() const;
};

// Test-set hypotheses for every decoder of a trained system.
SystemResult evaluate_system(const ExperimentConfig& cfg, const Corpus& corpus, const SubwordAssets& assets,
                             const TrainedSystem& system);

// Detruecased, detokenised hypotheses against normalised raw references.
double score_tokenized(const std::vector<textpipe::Tokens>& hypotheses, const std::vector<std::string>& references);

Report run_pipeline(const ExperimentConfig& cfg, std::ostream* progress = nullptr);

}  // namespace bmtl::pipeline
