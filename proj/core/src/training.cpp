#include "bmtl/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>

#include "bmtl/bleu.hpp"
#include "bmtl/decoding.hpp"
#include "bmtl/error.hpp"
#include "bmtl/textpipe.hpp"
#include "bmtl/util.hpp"

namespace bmtl::training {

LossMode parse_loss_mode(const std::string& name) {
  if (name == "mean") return LossMode::mean;
  if (name == "sum") return LossMode::sum;
  throw ValidationError("loss_mode: expected 'mean' or 'sum', got '" + name + "'");
}

std::string loss_mode_name(LossMode mode) { return mode == LossMode::mean ? "mean" : "sum"; }

std::vector<std::vector<int>> segment_targets_multi(const std::vector<std::string>& words,
                                                    std::span<const subword::BpeModel> decoders) {
  if (decoders.empty()) throw ValidationError("segment_targets_multi: no decoder assets");
  std::vector<std::vector<int>> out;
  for (const auto& d : decoders) out.push_back(subword::encode_sentence(d.vocab, d.merges, words));
  return out;
}

ExampleSet build_examples(const std::vector<std::vector<std::string>>& source_words,
                          const std::vector<std::vector<std::string>>& target_words,
                          const subword::BpeModel& source_model, std::span<const subword::BpeModel> decoders,
                          std::size_t max_len) {
  if (source_words.size() != target_words.size()) {
    throw ValidationError("parallel corpus: " + std::to_string(source_words.size()) + " source lines vs " +
                          std::to_string(target_words.size()) + " target lines");
  }
  ExampleSet set;
  for (std::size_t i = 0; i < source_words.size(); ++i) {
    Example ex;
    ex.source = subword::encode_sentence(source_model.vocab, source_model.merges, source_words[i]);
    ex.targets = segment_targets_multi(target_words[i], decoders);
    std::size_t longest = ex.source.size() - 2;
    for (const auto& t : ex.targets) longest = std::max(longest, t.size() - 2);
    if (longest > max_len) {
      ++set.dropped;
      continue;
    }
    set.examples.push_back(std::move(ex));
    set.kept.push_back(i);
  }
  return set;
}

std::size_t batches_per_epoch(std::size_t corpus_size, std::size_t batch_size) {
  if (batch_size == 0) throw ValidationError("batch_size must be positive");
  return (corpus_size + batch_size - 1) / batch_size;
}

std::vector<Batch> make_batches(const std::vector<Example>& corpus, std::size_t batch_size, std::uint64_t seed) {
  if (corpus.empty()) throw ValidationError("make_batches: empty corpus");
  if (batch_size == 0) throw ValidationError("batch_size must be positive");
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return corpus[a].source.size() < corpus[b].source.size(); });
  std::vector<Batch> batches;
  const std::size_t decoders = corpus.front().targets.size();
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    Batch b;
    std::vector<std::vector<int>> src;
    std::vector<std::vector<std::vector<int>>> tgt(decoders);
    for (std::size_t i = start; i < std::min(order.size(), start + batch_size); ++i) {
      const auto& ex = corpus[order[i]];
      if (ex.targets.size() != decoders) throw ValidationError("make_batches: inconsistent decoder count");
      b.indices.push_back(order[i]);
      src.push_back(ex.source);
      for (std::size_t k = 0; k < decoders; ++k) tgt[k].push_back(ex.targets[k]);
    }
    b.source = model::TokenBatch::from(src);
    for (auto& t : tgt) b.targets.push_back(model::TokenBatch::from(t));
    batches.push_back(std::move(b));
  }
  std::mt19937_64 rng(seed);
  stable_shuffle(batches.begin(), batches.end(), rng);
  return batches;
}

NllTotal sequence_nll(const std::vector<std::vector<double>>& logits, std::span<const int> targets) {
  if (targets.empty()) return {};
  if (logits.size() != targets.size() - 1) {
    throw ValidationError("sequence_nll: " + std::to_string(logits.size()) + " logit rows for " +
                          std::to_string(targets.size()) + " targets");
  }
  NllTotal out;
  for (std::size_t t = 0; t < logits.size(); ++t) {
    const int y = targets[t + 1];
    if (y == subword::kPad) continue;
    out.total += nn::cross_entropy<double>(logits[t], static_cast<std::size_t>(y)).loss;
    ++out.count;
  }
  return out;
}

double combine_losses(std::span<const NllTotal> per_decoder, LossMode mode) {
  if (per_decoder.empty()) throw ValidationError("combine_losses: no decoders");
  double sum = 0.0;
  for (std::size_t k = 0; k < per_decoder.size(); ++k) {
    if (per_decoder[k].count == 0) throw ValidationError("combine_losses: decoder " + std::to_string(k) + " has no target tokens");
    sum += per_decoder[k].total / static_cast<double>(per_decoder[k].count);
  }
  return mode == LossMode::mean ? sum / static_cast<double>(per_decoder.size()) : sum;
}

template <typename T>
typename nn::Graph<T>::Var batch_loss(nn::Graph<T>& g, const model::Seq2Seq<T>& model, const Batch& batch,
                                      model::Dropout* dropout, LossMode mode, std::vector<NllTotal>* per_decoder) {
  const std::size_t K = model.config().decoders.size();
  if (batch.targets.size() != K) throw ValidationError("batch has " + std::to_string(batch.targets.size()) +
                                                       " target sets for " + std::to_string(K) + " decoders");
  auto enc = model.encode(g, batch.source, dropout);
  typename nn::Graph<T>::Var total{};
  if (per_decoder) per_decoder->assign(K, {});
  for (std::size_t k = 0; k < K; ++k) {
    const auto& tgt = batch.targets[k];
    if (tgt.rows != batch.source.rows) throw ValidationError("target rows do not match the source batch");
    std::size_t count = 0;
    for (std::size_t r = 0; r < tgt.rows; ++r) count += tgt.lengths[r] > 0 ? tgt.lengths[r] - 1 : 0;
    if (count == 0) throw ValidationError("decoder " + std::to_string(k) + " has no target tokens in the batch");
    const double scale = 1.0 / static_cast<double>(count) / (mode == LossMode::mean ? static_cast<double>(K) : 1.0);

    auto att = model.attention_keys(g, k, enc);
    auto logits = model.teacher_forced(g, k, att, tgt, dropout);
    typename nn::Graph<T>::Var dec_total{};
    for (std::size_t t = 0; t < logits.size(); ++t) {
      const auto ys = tgt.column(t + 1);
      std::vector<T> w(tgt.rows);
      for (std::size_t r = 0; r < tgt.rows; ++r) w[r] = t + 1 < tgt.lengths[r] ? static_cast<T>(scale) : T(0);
      auto term = g.weighted_nll(logits[t], ys, w);
      dec_total = t == 0 ? term : g.add(dec_total, term);
    }
    if (per_decoder) {
      const double weighted = static_cast<double>(g.value(dec_total)(0, 0));
      (*per_decoder)[k] = {weighted / scale, count};
    }
    total = k == 0 ? dec_total : g.add(total, dec_total);
  }
  return total;
}

template nn::Graph<float>::Var batch_loss<float>(nn::Graph<float>&, const model::Seq2Seq<float>&, const Batch&,
                                                 model::Dropout*, LossMode, std::vector<NllTotal>*);
template nn::Graph<double>::Var batch_loss<double>(nn::Graph<double>&, const model::Seq2Seq<double>&, const Batch&,
                                                   model::Dropout*, LossMode, std::vector<NllTotal>*);

StepResult train_step(nn::ParameterStore<float>& store, nn::AdamState<float>& adam,
                      const model::ModelConfig& config, const Batch& batch, const TrainConfig& tc,
                      std::uint64_t dropout_seed) {
  model::Seq2Seq<float> m(config, store);
  model::Dropout dropout(tc.dropout, dropout_seed);
  nn::Graph<float> g(true);
  StepResult result;
  auto loss = batch_loss(g, m, batch, tc.dropout > 0.0 ? &dropout : nullptr, tc.loss_mode, &result.per_decoder);
  result.loss = static_cast<double>(g.value(loss)(0, 0));
  if (!std::isfinite(result.loss)) {
    std::string detail;
    for (std::size_t k = 0; k < result.per_decoder.size(); ++k) {
      detail += " " + config.decoders[k].name + "=" + format_double(result.per_decoder[k].total);
    }
    throw NumericError("non-finite training loss (per-decoder totals:" + detail + ")");
  }
  store.zero_grad();
  g.backward(loss);
  g.accumulate_into(store);
  result.grad_norm = static_cast<double>(nn::clip_global_norm(store, static_cast<float>(tc.clip_norm)));
  if (!std::isfinite(result.grad_norm)) throw NumericError("non-finite gradient norm");
  nn::adam_step(store, adam);
  store.zero_grad();
  return result;
}

std::vector<double> evaluate_dev(const std::vector<std::vector<std::string>>& references, std::size_t decoders,
                                 const Translator& translate) {
  std::vector<std::string> refs;
  for (const auto& r : references) refs.push_back(textpipe::detokenize(textpipe::detruecase(r)));
  std::vector<double> out;
  for (std::size_t k = 0; k < decoders; ++k) {
    std::vector<std::string> hyps;
    for (std::size_t i = 0; i < references.size(); ++i) {
      hyps.push_back(textpipe::detokenize(textpipe::detruecase(translate(k, i))));
    }
    out.push_back(bleu::corpus_bleu(hyps, refs).bleu);
  }
  return out;
}

std::vector<double> evaluate_dev(const model::Seq2Seq<float>& model, const std::vector<std::vector<int>>& sources,
                                 const std::vector<std::vector<std::string>>& references,
                                 std::span<const subword::SubwordVocabulary* const> vocabs) {
  const auto& decs = model.config().decoders;
  if (vocabs.size() != decs.size()) throw ValidationError("evaluate_dev: one vocabulary per decoder is required");
  return evaluate_dev(references, decs.size(), [&](std::size_t k, std::size_t i) {
    auto h = decoding::greedy_decode(model, decs[k].name, sources.at(i));
    return subword::decode_to_words(*vocabs[k], h.ids);
  });
}

bool EarlyStopper::observe(std::span<const double> bleu) {
  if (bleu.empty()) throw ValidationError("EarlyStopper: no scores");
  const double avg = std::accumulate(bleu.begin(), bleu.end(), 0.0) / static_cast<double>(bleu.size());
  if (avg > best_) {
    best_ = avg;
    since_best_ = 0;
    return true;
  }
  ++since_best_;
  return false;
}

std::uint64_t updates_to_fraction(const std::vector<EvalRecord>& history, std::size_t k, double fraction,
                                  double target) {
  for (const auto& rec : history) {
    if (k < rec.bleu.size() && rec.bleu[k] >= fraction * target) return rec.update;
  }
  return 0;
}

AssetRef make_asset(std::string name, std::string path) {
  AssetRef a{std::move(name), std::move(path), 0};
  a.hash = hash_file(a.path);
  return a;
}

void verify_asset(const AssetRef& asset) {
  const auto actual = hash_file(asset.path);
  if (actual != asset.hash) {
    throw HashMismatchError("asset '" + asset.name + "' (" + asset.path + ") has hash " + hex64(actual) +
                            ", checkpoint expects " + hex64(asset.hash));
  }
}

void put_model_config(const model::ModelConfig& c, nn::Archive& a) {
  a.set_meta("model.embedding_dim", std::to_string(c.embedding_dim));
  a.set_meta("model.encoder_hidden", std::to_string(c.encoder_hidden));
  a.set_meta("model.encoder_layers", std::to_string(c.encoder_layers));
  a.set_meta("model.decoder_hidden", std::to_string(c.decoder_hidden));
  a.set_meta("model.dropout", format_double(c.dropout));
  a.set_meta("model.source_vocab_size", std::to_string(c.source_vocab_size));
  std::vector<std::string> decs;
  for (const auto& d : c.decoders) decs.push_back(d.name + ":" + std::to_string(d.vocab_size));
  a.set_meta("model.decoders", join(decs, ","));
}

model::ModelConfig get_model_config(const nn::Archive& a) {
  model::ModelConfig c;
  auto num = [&](const char* key) { return static_cast<std::size_t>(parse_uint(a.require_meta(key), key)); };
  c.embedding_dim = num("model.embedding_dim");
  c.encoder_hidden = num("model.encoder_hidden");
  c.encoder_layers = num("model.encoder_layers");
  c.decoder_hidden = num("model.decoder_hidden");
  c.dropout = parse_double(a.require_meta("model.dropout"), "model.dropout");
  c.source_vocab_size = num("model.source_vocab_size");
  for (const auto& item : split(a.require_meta("model.decoders"), ',')) {
    const auto colon = item.rfind(':');
    if (colon == std::string::npos) throw IoError("malformed decoder entry '" + item + "'");
    c.decoders.push_back({item.substr(0, colon), static_cast<std::size_t>(parse_uint(item.substr(colon + 1), "decoder size"))});
  }
  c.validate();
  return c;
}

namespace {

std::string join_doubles(const std::vector<double>& v) {
  std::vector<std::string> parts;
  for (double x : v) parts.push_back(format_double(x));
  return join(parts, ",");
}

std::vector<double> split_doubles(const std::string& s) {
  std::vector<double> out;
  if (s.empty()) return out;
  for (const auto& p : split(s, ',')) out.push_back(parse_double(p, "checkpoint value"));
  return out;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  nn::Archive a;
  a.set_meta("kind", "checkpoint");
  put_model_config(ckpt.config, a);
  a.set_meta("assets", std::to_string(ckpt.assets.size()));
  for (std::size_t i = 0; i < ckpt.assets.size(); ++i) {
    const auto& as = ckpt.assets[i];
    const auto key = "asset." + std::to_string(i);
    a.set_meta(key + ".name", as.name);
    a.set_meta(key + ".path", as.path);
    a.set_meta(key + ".hash", hex64(as.hash));
  }
  a.set_meta("adam.learning_rate", format_double(ckpt.adam.config.learning_rate));
  a.set_meta("adam.beta1", format_double(ckpt.adam.config.beta1));
  a.set_meta("adam.beta2", format_double(ckpt.adam.config.beta2));
  a.set_meta("adam.epsilon", format_double(ckpt.adam.config.epsilon));
  const auto& st = ckpt.state;
  a.set_meta("state.update", std::to_string(st.update));
  a.set_meta("state.best_bleu", join_doubles(st.best_bleu));
  a.set_meta("state.best_average", format_double(st.best_average));
  a.set_meta("state.best_update", std::to_string(st.best_update));
  a.set_meta("state.evals_since_best", std::to_string(st.evals_since_best));
  a.set_meta("state.history", std::to_string(st.history.size()));
  for (std::size_t i = 0; i < st.history.size(); ++i) {
    a.set_meta("history." + std::to_string(i),
               std::to_string(st.history[i].update) + " " + join_doubles(st.history[i].bleu));
  }
  a.set_meta("has_best", ckpt.best_params.size() ? "1" : "0");
  nn::save_parameters(ckpt.params, a);
  if (ckpt.best_params.size()) nn::save_parameters(ckpt.best_params, a, "best/");
  if (!ckpt.adam.first_moment.empty()) nn::save_adam(ckpt.adam, ckpt.params, a);
  a.save(path);
}

Checkpoint load_checkpoint(const std::string& path, bool verify_assets) {
  const auto a = nn::Archive::load(path);
  const auto* kind = a.meta("kind");
  if (!kind || *kind != "checkpoint") throw IoError(path + ": not a checkpoint archive");
  Checkpoint ckpt;
  ckpt.config = get_model_config(a);
  const auto n_assets = parse_uint(a.require_meta("assets"), "assets");
  for (std::uint64_t i = 0; i < n_assets; ++i) {
    const auto key = "asset." + std::to_string(i);
    const std::vector<std::string> parts{a.require_meta(key + ".name"), a.require_meta(key + ".path"),
                                         a.require_meta(key + ".hash")};
    AssetRef as{parts[0], parts[1], std::stoull(parts[2], nullptr, 16)};
    if (verify_assets) verify_asset(as);
    ckpt.assets.push_back(std::move(as));
  }
  model::allocate_parameters(ckpt.config, ckpt.params, 0);
  nn::load_parameters(ckpt.params, a);
  if (a.require_meta("has_best") == "1") {
    model::allocate_parameters(ckpt.config, ckpt.best_params, 0);
    nn::load_parameters(ckpt.best_params, a, "best/");
  }
  nn::AdamConfig ac;
  ac.learning_rate = parse_double(a.require_meta("adam.learning_rate"), "adam.learning_rate");
  ac.beta1 = parse_double(a.require_meta("adam.beta1"), "adam.beta1");
  ac.beta2 = parse_double(a.require_meta("adam.beta2"), "adam.beta2");
  ac.epsilon = parse_double(a.require_meta("adam.epsilon"), "adam.epsilon");
  ckpt.adam = a.meta("adam.step") ? nn::load_adam(ckpt.params, a, ac) : nn::AdamState<float>::zeros_like(ckpt.params, ac);
  auto& st = ckpt.state;
  st.update = parse_uint(a.require_meta("state.update"), "state.update");
  st.best_bleu = split_doubles(a.require_meta("state.best_bleu"));
  st.best_average = parse_double(a.require_meta("state.best_average"), "state.best_average");
  st.best_update = parse_uint(a.require_meta("state.best_update"), "state.best_update");
  st.evals_since_best = parse_uint(a.require_meta("state.evals_since_best"), "state.evals_since_best");
  const auto n_hist = parse_uint(a.require_meta("state.history"), "state.history");
  for (std::uint64_t i = 0; i < n_hist; ++i) {
    const auto parts = split(a.require_meta("history." + std::to_string(i)), ' ');
    if (parts.size() != 2) throw IoError(path + ": malformed history record " + std::to_string(i));
    st.history.push_back({parse_uint(parts[0], "history update"), split_doubles(parts[1])});
  }
  return ckpt;
}

Trainer::Trainer(model::ModelConfig config, std::vector<Example> train, DevSet dev, TrainerOptions options,
                 std::vector<AssetRef> assets)
    : config_(std::move(config)),
      train_(std::move(train)),
      dev_(std::move(dev)),
      options_(options),
      assets_(std::move(assets)),
      stopper_(options.patience) {
  config_.validate();
  if (train_.empty()) throw ValidationError("training corpus is empty");
  for (const auto& ex : train_) {
    if (ex.targets.size() != config_.decoders.size()) {
      throw ValidationError("training example has " + std::to_string(ex.targets.size()) + " targets for " +
                            std::to_string(config_.decoders.size()) + " decoders");
    }
  }
  if (dev_.vocabs.size() != config_.decoders.size() && !dev_.sources.empty()) {
    throw ValidationError("dev set needs one vocabulary per decoder");
  }
  if (options_.batch_size == 0) throw ValidationError("batch_size must be positive");
}

void Trainer::initialize() {
  params_ = {};
  model::allocate_parameters(config_, params_, derive_seed(options_.seed, "init"));
  adam_ = nn::AdamState<float>::zeros_like(params_, options_.train.adam);
  state_ = {};
  state_.best_bleu.assign(config_.decoders.size(), -1.0);
  stopper_ = EarlyStopper(options_.patience);
  best_params_ = {};
}

void Trainer::resume(const Checkpoint& ckpt) {
  if (count_parameters(ckpt.config).total != count_parameters(config_).total) {
    throw ValidationError("checkpoint model configuration does not match");
  }
  params_ = {};
  model::allocate_parameters(config_, params_, 0);
  for (std::size_t i = 0; i < params_.size(); ++i) params_[i].value = ckpt.params.at(params_[i].name).value;
  best_params_ = {};
  if (ckpt.best_params.size()) {
    model::allocate_parameters(config_, best_params_, 0);
    for (std::size_t i = 0; i < best_params_.size(); ++i) {
      best_params_[i].value = ckpt.best_params.at(best_params_[i].name).value;
    }
  }
  adam_ = ckpt.adam;
  adam_.config = options_.train.adam;
  state_ = ckpt.state;
  if (state_.best_bleu.size() != config_.decoders.size()) state_.best_bleu.assign(config_.decoders.size(), -1.0);
  stopper_ = EarlyStopper(options_.patience);
  stopper_.restore(state_.best_average, state_.evals_since_best);
}

const std::vector<Batch>& Trainer::epoch_batches(std::uint64_t epoch) {
  if (epoch != cached_epoch_) {
    cached_batches_ = make_batches(train_, options_.batch_size, derive_seed(options_.seed, "shuffle", epoch));
    cached_epoch_ = epoch;
  }
  return cached_batches_;
}

StepResult Trainer::step(std::ostream* log) {
  if (params_.size() == 0) throw ValidationError("trainer is not initialized");
  const std::uint64_t nb = batches_per_epoch(train_.size(), options_.batch_size);
  const std::uint64_t u = state_.update;
  const std::uint64_t epoch = u / nb;
  const auto& batch = epoch_batches(epoch)[u % nb];
  adam_.config.learning_rate = options_.train.adam.learning_rate * std::pow(options_.lr_decay, static_cast<double>(epoch));
  auto r = train_step(params_, adam_, config_, batch, options_.train, derive_seed(options_.seed, "dropout", u));
  ++state_.update;
  if (log) *log << "update\t" << format_double(r.loss) << '\n';
  return r;
}

std::vector<double> Trainer::evaluate(std::ostream* log) {
  model::Seq2Seq<float> m(config_, params_);
  auto bleu = evaluate_dev(m, dev_.sources, dev_.references, dev_.vocabs);
  for (std::size_t k = 0; k < bleu.size(); ++k) {
    state_.best_bleu[k] = std::max(state_.best_bleu[k], bleu[k]);
    if (log) *log << "eval\t" << state_.update << '\t' << config_.decoders[k].name << '\t' << format_double(bleu[k]) << '\n';
  }
  state_.history.push_back({state_.update, bleu});
  if (stopper_.observe(bleu)) {
    best_params_ = params_;
    state_.best_update = state_.update;
  }
  state_.best_average = stopper_.best_average();
  state_.evals_since_best = stopper_.since_best();
  return bleu;
}

bool Trainer::finished() const {
  return state_.update >= options_.max_updates || stopper_.should_stop();
}

void Trainer::run(std::ostream* log) {
  const bool can_eval = !dev_.sources.empty() && options_.eval_every > 0;
  while (!finished()) {
    step(log);
    if (can_eval && (state_.update % options_.eval_every == 0 || state_.update == options_.max_updates)) evaluate(log);
  }
}

const nn::ParameterStore<float>& Trainer::best_params() const {
  return best_params_.size() ? best_params_ : params_;
}

Checkpoint Trainer::checkpoint() const {
  Checkpoint c;
  c.config = config_;
  c.assets = assets_;
  c.params = params_;
  c.best_params = best_params_;
  c.adam = adam_;
  c.adam.config = options_.train.adam;
  c.state = state_;
  return c;
}

}  // namespace bmtl::training
