#include "bmtl/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

#include "bmtl/bleu.hpp"
#include "bmtl/error.hpp"
#include "bmtl/util.hpp"

namespace bmtl::pipeline {

namespace fs = std::filesystem;

namespace {

struct Field {
  std::string key;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

template <typename M>
Field text_field(std::string key, M member) {
  return {key, [member](ExperimentConfig& c, const std::string& v) { c.*member = v; },
          [member](const ExperimentConfig& c) { return c.*member; }};
}

template <typename M>
Field size_field(std::string key, M member) {
  return {key,
          [member, key](ExperimentConfig& c, const std::string& v) {
            c.*member = static_cast<std::size_t>(parse_uint(v, key));
          },
          [member](const ExperimentConfig& c) { return std::to_string(c.*member); }};
}

template <typename M>
Field real_field(std::string key, M member) {
  return {key, [member, key](ExperimentConfig& c, const std::string& v) { c.*member = parse_double(v, key); },
          [member](const ExperimentConfig& c) { return format_double(c.*member); }};
}

bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ValidationError(key + ": expected true or false, got '" + v + "'");
}

template <typename M>
Field bool_field(std::string key, M member) {
  return {key, [member, key](ExperimentConfig& c, const std::string& v) { c.*member = parse_bool(v, key); },
          [member](const ExperimentConfig& c) { return std::string(c.*member ? "true" : "false"); }};
}

std::vector<std::string> list_items(const std::string& v, const std::string& key) {
  std::vector<std::string> items;
  for (const auto& part : split(v, ',')) {
    auto t = trim(part);
    if (t.empty()) throw ValidationError(key + ": empty list element");
    items.push_back(t);
  }
  return items;
}

const std::vector<Field>& fields() {
  using C = ExperimentConfig;
  static const std::vector<Field> table = {
      text_field("train_src", &C::train_src),
      text_field("train_tgt", &C::train_tgt),
      text_field("dev_src", &C::dev_src),
      text_field("dev_tgt", &C::dev_tgt),
      text_field("test_src", &C::test_src),
      text_field("test_tgt", &C::test_tgt),
      text_field("output_dir", &C::output_dir),
      size_field("src_bpe", &C::src_bpe),
      {"tgt_bpe",
       [](C& c, const std::string& v) {
         c.tgt_bpe.clear();
         for (const auto& item : list_items(v, "tgt_bpe")) c.tgt_bpe.push_back(parse_uint(item, "tgt_bpe"));
       },
       [](const C& c) {
         std::vector<std::string> parts;
         for (auto b : c.tgt_bpe) parts.push_back(std::to_string(b));
         return join(parts, ",");
       }},
      size_field("emb_dim", &C::emb_dim),
      size_field("enc_hidden", &C::enc_hidden),
      size_field("enc_layers", &C::enc_layers),
      size_field("dec_hidden", &C::dec_hidden),
      real_field("dropout", &C::dropout),
      real_field("learning_rate", &C::learning_rate),
      real_field("adam_beta1", &C::adam_beta1),
      real_field("adam_beta2", &C::adam_beta2),
      real_field("adam_eps", &C::adam_eps),
      real_field("lr_decay", &C::lr_decay),
      size_field("batch_size", &C::batch_size),
      real_field("clip_norm", &C::clip_norm),
      size_field("max_updates", &C::max_updates),
      size_field("eval_every", &C::eval_every),
      size_field("patience", &C::patience),
      size_field("max_len", &C::max_len),
      text_field("loss_mode", &C::loss_mode),
      size_field("beam_size", &C::beam_size),
      real_field("length_alpha", &C::length_alpha),
      size_field("combine_beam", &C::combine_beam),
      size_field("combine_radius", &C::combine_radius),
      size_field("lm_order", &C::lm_order),
      {"lm_lambdas",
       [](C& c, const std::string& v) {
         c.lm_lambdas.clear();
         for (const auto& item : list_items(v, "lm_lambdas")) c.lm_lambdas.push_back(parse_double(item, "lm_lambdas"));
       },
       [](const C& c) {
         std::vector<std::string> parts;
         for (auto l : c.lm_lambdas) parts.push_back(format_double(l));
         return join(parts, ",");
       }},
      real_field("w_lm", &C::w_lm),
      real_field("w_sys", &C::w_sys),
      real_field("w_len", &C::w_len),
      {"seed", [](C& c, const std::string& v) { c.seed = parse_uint(v, "seed"); },
       [](const C& c) { return std::to_string(c.seed); }},
      bool_field("baselines", &C::baselines),
      bool_field("report_train_bleu", &C::report_train_bleu),
  };
  return table;
}

const Field* find_field(const std::string& key) {
  for (const auto& f : fields()) {
    if (f.key == key) return &f;
  }
  return nullptr;
}

void require(bool ok, const std::string& message) {
  if (!ok) throw ValidationError(message);
}

std::string progress_prefix(const std::string& stage) { return "[" + stage + "] "; }

void note(std::ostream* progress, const std::string& stage, const std::string& text) {
  if (progress) *progress << progress_prefix(stage) << text << '\n' << std::flush;
}

std::vector<std::string> detok_lines(const std::vector<textpipe::Tokens>& corpus) {
  std::vector<std::string> out;
  out.reserve(corpus.size());
  for (const auto& t : corpus) out.push_back(textpipe::detokenize(textpipe::detruecase(t)));
  return out;
}

std::vector<std::vector<int>> encode_all(const subword::BpeModel& bpe, const std::vector<textpipe::Tokens>& corpus) {
  std::vector<std::vector<int>> out;
  out.reserve(corpus.size());
  for (const auto& words : corpus) out.push_back(subword::encode_sentence(bpe.vocab, bpe.merges, words));
  return out;
}

std::string bpe_prefix(const ExperimentConfig& cfg, const std::string& name) { return cfg.out("bpe/" + name); }

}  // namespace

ExperimentConfig ExperimentConfig::parse(std::string_view text, std::string base_dir) {
  ExperimentConfig cfg;
  cfg.base_dir = std::move(base_dir);
  std::set<std::string> seen;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw ValidationError("config line " + std::to_string(number) + ": expected key = value");
    }
    const auto key = trim(std::string_view(body).substr(0, eq));
    const auto value = trim(std::string_view(body).substr(eq + 1));
    const auto where = "config line " + std::to_string(number) + ": ";
    if (!find_field(key)) throw ValidationError(where + "unknown key '" + key + "'");
    if (!seen.insert(key).second) throw ValidationError(where + "duplicate key '" + key + "'");
    try {
      cfg.set(key, value);
    } catch (const ValidationError& e) {
      throw ValidationError(where + e.what());
    }
  }
  return cfg;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
  return parse(read_file(path), fs::absolute(path).parent_path().lexically_normal().string());
}

void ExperimentConfig::set(const std::string& key, const std::string& value) {
  const auto* f = find_field(key);
  if (!f) throw ValidationError("unknown key '" + key + "'");
  f->set(*this, value);
}

void ExperimentConfig::validate(bool check_files) const {
  const std::pair<const char*, const std::string*> paths[] = {
      {"train_src", &train_src}, {"train_tgt", &train_tgt}, {"dev_src", &dev_src},
      {"dev_tgt", &dev_tgt},     {"test_src", &test_src},   {"test_tgt", &test_tgt},
  };
  for (const auto& [key, value] : paths) {
    if (!check_files) break;
    require(!value->empty(), std::string(key) + " is required");
    require(fs::is_regular_file(resolve(*value)), std::string(key) + ": no such file " + resolve(*value));
  }
  require(!output_dir.empty(), "output_dir must not be empty");
  require(src_bpe > subword::kNumReserved, "src_bpe must exceed the reserved ids");
  require(!tgt_bpe.empty(), "tgt_bpe needs at least one budget");
  std::set<std::size_t> budgets;
  for (auto b : tgt_bpe) {
    require(b > subword::kNumReserved, "tgt_bpe entries must exceed the reserved ids");
    require(budgets.insert(b).second, "tgt_bpe has duplicate budget " + std::to_string(b));
  }
  require(emb_dim > 0, "emb_dim must be positive");
  require(enc_hidden > 0, "enc_hidden must be positive");
  require(enc_layers > 0, "enc_layers must be positive");
  require(dec_hidden > 0, "dec_hidden must be positive");
  require(dropout >= 0.0 && dropout < 1.0, "dropout must be in [0, 1)");
  require(learning_rate > 0.0, "learning_rate must be positive");
  require(adam_beta1 >= 0.0 && adam_beta1 < 1.0, "adam_beta1 must be in [0, 1)");
  require(adam_beta2 >= 0.0 && adam_beta2 < 1.0, "adam_beta2 must be in [0, 1)");
  require(adam_eps > 0.0, "adam_eps must be positive");
  require(lr_decay > 0.0 && lr_decay <= 1.0, "lr_decay must be in (0, 1]");
  require(batch_size > 0, "batch_size must be positive");
  require(clip_norm > 0.0, "clip_norm must be positive");
  require(max_updates > 0, "max_updates must be positive");
  require(max_len > 0, "max_len must be positive");
  training::parse_loss_mode(loss_mode);
  require(beam_size > 0, "beam_size must be positive");
  require(length_alpha >= 0.0, "length_alpha must be non-negative");
  require(lm_order > 0, "lm_order must be positive");
  require(lm_lambdas.size() == lm_order + 1,
          "lm_lambdas needs " + std::to_string(lm_order + 1) + " weights for lm_order " + std::to_string(lm_order));
  double sum = 0.0;
  for (auto l : lm_lambdas) {
    require(l >= 0.0, "lm_lambdas must be non-negative");
    sum += l;
  }
  require(std::abs(sum - 1.0) < 1e-9, "lm_lambdas must sum to 1");
  require(std::isfinite(w_lm) && std::isfinite(w_sys) && std::isfinite(w_len), "combination weights must be finite");
}

std::string ExperimentConfig::resolve(const std::string& path) const {
  fs::path p(path);
  if (p.is_absolute()) return p.string();
  return (fs::path(base_dir) / p).lexically_normal().string();
}

std::string ExperimentConfig::out(const std::string& relative) const {
  return (fs::path(resolve(output_dir)) / relative).string();
}

std::string ExperimentConfig::canonical() const {
  std::string text;
  for (const auto& f : fields()) text += f.key + "=" + f.get(*this) + "\n";
  return text;
}

const std::vector<std::string>& ExperimentConfig::keys() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> v;
    for (const auto& f : fields()) v.push_back(f.key);
    return v;
  }();
  return names;
}

std::vector<std::string> ExperimentConfig::decoder_names() const {
  std::vector<std::string> names;
  for (auto b : tgt_bpe) names.push_back("bpe" + std::to_string(b));
  return names;
}

model::ModelConfig ExperimentConfig::model_config(std::size_t source_vocab,
                                                  const std::vector<std::size_t>& target_vocabs) const {
  model::ModelConfig m;
  m.embedding_dim = emb_dim;
  m.encoder_hidden = enc_hidden;
  m.encoder_layers = enc_layers;
  m.decoder_hidden = dec_hidden;
  m.dropout = dropout;
  m.source_vocab_size = source_vocab;
  const auto names = decoder_names();
  for (std::size_t k = 0; k < target_vocabs.size(); ++k) m.decoders.push_back({names[k], target_vocabs[k]});
  return m;
}

training::TrainerOptions ExperimentConfig::trainer_options() const {
  training::TrainerOptions o;
  o.train.adam = {learning_rate, adam_beta1, adam_beta2, adam_eps};
  o.train.clip_norm = clip_norm;
  o.train.dropout = dropout;
  o.train.loss_mode = training::parse_loss_mode(loss_mode);
  o.batch_size = batch_size;
  o.max_updates = max_updates;
  o.eval_every = eval_every;
  o.patience = patience;
  o.lr_decay = lr_decay;
  o.seed = seed;
  return o;
}

decoding::SearchParams ExperimentConfig::search_params() const { return {beam_size, length_alpha, 0}; }

combine::CombineParams ExperimentConfig::combine_params() const {
  return {combine_beam, combine_radius, w_lm, w_sys, w_len};
}

void write_manifest(const std::string& path, const std::vector<std::pair<std::string, std::string>>& entries) {
  std::string text;
  for (const auto& [k, v] : entries) text += k + "=" + v + "\n";
  write_file(path, text);
}

std::vector<textpipe::Tokens> read_raw(const std::string& path) {
  const auto lines = read_lines(path);
  std::vector<textpipe::Tokens> out;
  out.reserve(lines.size());
  for (std::size_t i = 0; i < lines.size(); ++i) {
    try {
      out.push_back(textpipe::tokenize(textpipe::normalize_text(lines[i], i + 1)));
    } catch (const DecodeError& e) {
      throw DecodeError(path + ": " + e.what());
    }
  }
  return out;
}

std::vector<textpipe::Tokens> read_tokenized(const std::string& path) {
  std::vector<textpipe::Tokens> out;
  for (const auto& line : read_lines(path)) out.push_back(split_whitespace(line));
  return out;
}

void write_tokenized(const std::string& path, const std::vector<textpipe::Tokens>& corpus) {
  std::vector<std::string> lines;
  lines.reserve(corpus.size());
  for (const auto& t : corpus) lines.push_back(join(t, " "));
  write_lines(path, lines);
}

Corpus preprocess(const ExperimentConfig& cfg) {
  fs::create_directories(cfg.out("prep"));
  Corpus c;
  c.train_src = read_raw(cfg.resolve(cfg.train_src));
  c.train_tgt = read_raw(cfg.resolve(cfg.train_tgt));
  c.dev_src = read_raw(cfg.resolve(cfg.dev_src));
  c.dev_tgt = read_raw(cfg.resolve(cfg.dev_tgt));
  c.test_src = read_raw(cfg.resolve(cfg.test_src));
  c.test_tgt = read_raw(cfg.resolve(cfg.test_tgt));
  require(c.train_src.size() == c.train_tgt.size(), "train source and target differ in line count");
  require(c.dev_src.size() == c.dev_tgt.size(), "dev source and target differ in line count");
  require(c.test_src.size() == c.test_tgt.size(), "test source and target differ in line count");
  require(!c.train_src.empty(), "training corpus is empty");

  const auto tc_src = textpipe::train_truecaser(c.train_src);
  const auto tc_tgt = textpipe::train_truecaser(c.train_tgt);
  tc_src.save(cfg.out("prep/truecase.src"));
  tc_tgt.save(cfg.out("prep/truecase.tgt"));
  auto apply = [](const textpipe::TruecaseModel& m, std::vector<textpipe::Tokens>& corpus) {
    for (auto& t : corpus) t = textpipe::apply_truecase(m, t);
  };
  apply(tc_src, c.train_src);
  apply(tc_src, c.dev_src);
  apply(tc_src, c.test_src);
  apply(tc_tgt, c.train_tgt);
  apply(tc_tgt, c.dev_tgt);
  apply(tc_tgt, c.test_tgt);

  write_tokenized(cfg.out("prep/train.src"), c.train_src);
  write_tokenized(cfg.out("prep/train.tgt"), c.train_tgt);
  write_tokenized(cfg.out("prep/dev.src"), c.dev_src);
  write_tokenized(cfg.out("prep/dev.tgt"), c.dev_tgt);
  write_tokenized(cfg.out("prep/test.src"), c.test_src);
  write_tokenized(cfg.out("prep/test.tgt"), c.test_tgt);
  return c;
}

Corpus load_preprocessed(const ExperimentConfig& cfg) {
  Corpus c;
  c.train_src = read_tokenized(cfg.out("prep/train.src"));
  c.train_tgt = read_tokenized(cfg.out("prep/train.tgt"));
  c.dev_src = read_tokenized(cfg.out("prep/dev.src"));
  c.dev_tgt = read_tokenized(cfg.out("prep/dev.tgt"));
  c.test_src = read_tokenized(cfg.out("prep/test.src"));
  c.test_tgt = read_tokenized(cfg.out("prep/test.tgt"));
  return c;
}

void save_bpe(const subword::BpeModel& model, const std::string& prefix) {
  model.merges.save(prefix + ".merges");
  model.vocab.save(prefix + ".vocab");
}

subword::BpeModel load_bpe(const std::string& prefix) {
  return {subword::MergeTable::load(prefix + ".merges"), subword::SubwordVocabulary::load(prefix + ".vocab")};
}

namespace {

void add_refs(SubwordAssets& assets, const std::string& name, const std::string& prefix) {
  assets.refs.push_back(training::make_asset(name + ".merges", prefix + ".merges"));
  assets.refs.push_back(training::make_asset(name + ".vocab", prefix + ".vocab"));
}

}  // namespace

SubwordAssets learn_subwords(const ExperimentConfig& cfg, const Corpus& corpus) {
  fs::create_directories(cfg.out("bpe"));
  SubwordAssets a;
  a.source = subword::learn_bpe(subword::count_words(corpus.train_src), cfg.src_bpe);
  save_bpe(a.source, bpe_prefix(cfg, "src"));
  add_refs(a, "src", bpe_prefix(cfg, "src"));
  const auto target_counts = subword::count_words(corpus.train_tgt);
  const auto names = cfg.decoder_names();
  for (std::size_t k = 0; k < cfg.tgt_bpe.size(); ++k) {
    a.targets.push_back(subword::learn_bpe(target_counts, cfg.tgt_bpe[k]));
    save_bpe(a.targets.back(), bpe_prefix(cfg, "tgt." + names[k]));
    add_refs(a, names[k], bpe_prefix(cfg, "tgt." + names[k]));
  }
  return a;
}

SubwordAssets load_subwords(const ExperimentConfig& cfg) {
  SubwordAssets a;
  a.source = load_bpe(bpe_prefix(cfg, "src"));
  add_refs(a, "src", bpe_prefix(cfg, "src"));
  for (const auto& name : cfg.decoder_names()) {
    a.targets.push_back(load_bpe(bpe_prefix(cfg, "tgt." + name)));
    add_refs(a, name, bpe_prefix(cfg, "tgt." + name));
  }
  return a;
}

TrainedSystem train_system(const ExperimentConfig& cfg, const Corpus& corpus, const SubwordAssets& assets,
                           const std::string& label, const std::vector<std::size_t>& decoders,
                           std::ostream* progress, bool resume) {
  fs::create_directories(cfg.out("models"));
  fs::create_directories(cfg.out("logs"));

  std::vector<subword::BpeModel> targets;
  std::vector<std::size_t> vocab_sizes;
  std::vector<training::AssetRef> refs{assets.refs[0], assets.refs[1]};
  for (auto k : decoders) {
    targets.push_back(assets.targets.at(k));
    vocab_sizes.push_back(assets.targets[k].vocab.size());
    refs.push_back(assets.refs[2 + 2 * k]);
    refs.push_back(assets.refs[3 + 2 * k]);
  }
  auto config = cfg.model_config(assets.source.vocab.size(), {});
  const auto names = cfg.decoder_names();
  for (std::size_t i = 0; i < decoders.size(); ++i) config.decoders.push_back({names[decoders[i]], vocab_sizes[i]});

  auto examples = training::build_examples(corpus.train_src, corpus.train_tgt, assets.source, targets, cfg.max_len);
  note(progress, label, std::to_string(examples.examples.size()) + " training pairs, " +
                            std::to_string(examples.dropped) + " dropped over max_len");

  training::DevSet dev;
  dev.sources = encode_all(assets.source, corpus.dev_src);
  dev.references = corpus.dev_tgt;
  for (auto k : decoders) dev.vocabs.push_back(&assets.targets[k].vocab);

  training::Trainer trainer(config, std::move(examples.examples), std::move(dev), cfg.trainer_options(), refs);
  TrainedSystem sys;
  sys.label = label;
  sys.decoders = decoders;
  sys.checkpoint_path = cfg.out("models/" + label + ".ckpt");
  sys.log_path = cfg.out("logs/" + label + ".log");

  std::ostringstream log;
  if (resume && fs::exists(sys.checkpoint_path)) {
    trainer.resume(training::load_checkpoint(sys.checkpoint_path));
    if (fs::exists(sys.log_path)) log << read_file(sys.log_path);
    note(progress, label, "resuming at update " + std::to_string(trainer.state().update));
  } else {
    trainer.initialize();
  }
  trainer.run(&log);
  write_file(sys.log_path, log.str());
  sys.checkpoint = trainer.checkpoint();
  training::save_checkpoint(sys.checkpoint, sys.checkpoint_path);
  note(progress, label, "stopped at update " + std::to_string(trainer.state().update) + ", best at " +
                            std::to_string(trainer.state().best_update));
  return sys;
}

std::vector<std::size_t> system_decoders(const ExperimentConfig& cfg, const std::string& label) {
  const auto names = cfg.decoder_names();
  if (label == "bmtl") {
    std::vector<std::size_t> all(names.size());
    for (std::size_t k = 0; k < all.size(); ++k) all[k] = k;
    return all;
  }
  for (std::size_t k = 0; k < names.size(); ++k) {
    if (label == "baseline." + names[k]) return {k};
  }
  throw ValidationError("system: expected bmtl or baseline.<decoder>, got '" + label + "'");
}

double score_tokenized(const std::vector<textpipe::Tokens>& hypotheses, const std::vector<std::string>& references) {
  return bleu::corpus_bleu(detok_lines(hypotheses), references).bleu;
}

namespace {

std::vector<std::string> normalized_refs(const std::string& path) {
  const auto lines = read_lines(path);
  std::vector<std::string> out;
  out.reserve(lines.size());
  for (std::size_t i = 0; i < lines.size(); ++i) out.push_back(textpipe::normalize_text(lines[i], i + 1));
  return out;
}

std::vector<textpipe::Tokens> split_lines(const std::vector<std::string>& lines) {
  std::vector<textpipe::Tokens> out;
  out.reserve(lines.size());
  for (const auto& l : lines) out.push_back(split_whitespace(l));
  return out;
}

}  // namespace

SystemResult evaluate_system(const ExperimentConfig& cfg, const Corpus& corpus, const SubwordAssets& assets,
                             const TrainedSystem& system) {
  fs::create_directories(cfg.out("hyp"));
  const auto& ckpt = system.checkpoint;
  const auto& params = ckpt.best_params.size() ? ckpt.best_params : ckpt.params;
  model::Seq2Seq<float> m(ckpt.config, params);

  SystemResult r;
  r.label = system.label;
  r.parameters = model::count_parameters(ckpt.config).total;
  r.updates = ckpt.state.update;
  r.best_update = ckpt.state.best_update;

  const auto test_sources = encode_all(assets.source, corpus.test_src);
  const auto test_refs = normalized_refs(cfg.resolve(cfg.test_tgt));
  const auto& history = ckpt.state.history;
  std::size_t best_index = history.size();
  for (std::size_t i = 0; i < history.size(); ++i) {
    if (history[i].update == ckpt.state.best_update) best_index = i;
  }

  std::vector<std::vector<int>> train_sources;
  std::vector<std::string> train_refs;
  if (cfg.report_train_bleu) {
    train_sources = encode_all(assets.source, corpus.train_src);
    train_refs = detok_lines(corpus.train_tgt);
  }

  for (std::size_t i = 0; i < system.decoders.size(); ++i) {
    const auto k = system.decoders[i];
    const auto& vocab = assets.targets[k].vocab;
    DecoderResult d;
    d.name = ckpt.config.decoders[i].name;
    if (best_index < history.size()) {
      d.dev_bleu = history[best_index].bleu[i];
      d.updates_to_95 = training::updates_to_fraction(history, i, 0.95, d.dev_bleu);
    }
    double peak = -1.0;
    for (const auto& rec : history) {
      if (rec.bleu[i] > peak) {
        peak = rec.bleu[i];
        d.updates_to_best = rec.update;
      }
    }
    const auto translation = decoding::translate_corpus(m, d.name, vocab, test_sources, cfg.search_params());
    d.hypothesis_path = cfg.out("hyp/" + system.label + "." + d.name + ".txt");
    decoding::write_translation(translation, d.hypothesis_path, d.hypothesis_path + ".scores");
    d.test_bleu = score_tokenized(split_lines(translation.lines), test_refs);
    if (cfg.report_train_bleu) {
      const auto train = decoding::translate_corpus(m, d.name, vocab, train_sources, {1, cfg.length_alpha, 0});
      d.train_bleu = score_tokenized(split_lines(train.lines), train_refs);
    }
    r.decoders.push_back(std::move(d));
  }
  return r;
}

double Report::parameter_reduction() const {
  if (baseline_parameters == 0) return 0.0;
  return 1.0 - static_cast<double>(bmtl.parameters) / static_cast<double>(baseline_parameters);
}

std::string Report::text() const {
  auto fixed = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return std::string(buf);
  };
  std::ostringstream out;
  out << "system\tdecoder\tdev_bleu\ttest_bleu\ttrain_bleu\tupdates_to_95\tupdates_to_best\n";
  auto rows = [&](const SystemResult& s) {
    for (const auto& d : s.decoders) {
      out << s.label << '\t' << d.name << '\t' << fixed(d.dev_bleu) << '\t' << fixed(d.test_bleu) << '\t'
          << (d.train_bleu < 0 ? std::string("-") : fixed(d.train_bleu)) << '\t' << d.updates_to_95 << '\t'
          << d.updates_to_best << '\n';
    }
  };
  rows(bmtl);
  for (const auto& b : baselines) rows(b);
  out << "combined\tall\t-\t" << fixed(combined_bleu) << "\t-\t-\t-\n";
  out << "\nparameters\t" << bmtl.label << '\t' << bmtl.parameters << '\n';
  for (const auto& b : baselines) out << "parameters\t" << b.label << '\t' << b.parameters << '\n';
  if (!baselines.empty()) {
    out << "parameters\tbaselines_total\t" << baseline_parameters << '\n';
    out << "parameter_reduction\t" << fixed(100.0 * parameter_reduction()) << "%\n";
  }
  out << "updates\t" << bmtl.label << '\t' << bmtl.updates << "\tbest\t" << bmtl.best_update << '\n';
  for (const auto& b : baselines) out << "updates\t" << b.label << '\t' << b.updates << "\tbest\t" << b.best_update << '\n';
  return out.str();
}

Report run_pipeline(const ExperimentConfig& cfg, std::ostream* progress) {
  cfg.validate();
  fs::create_directories(cfg.resolve(cfg.output_dir));
  write_file(cfg.out("config.txt"), cfg.canonical());

  note(progress, "preprocess", "normalising, tokenising, truecasing");
  const auto corpus = preprocess(cfg);
  note(progress, "subword", "learning source and " + std::to_string(cfg.tgt_bpe.size()) + " target merge tables");
  const auto assets = learn_subwords(cfg, corpus);

  std::vector<std::size_t> all(cfg.tgt_bpe.size());
  for (std::size_t k = 0; k < all.size(); ++k) all[k] = k;

  Report report;
  const auto bmtl_sys = train_system(cfg, corpus, assets, "bmtl", all, progress);
  report.bmtl = evaluate_system(cfg, corpus, assets, bmtl_sys);

  if (cfg.baselines) {
    const auto names = cfg.decoder_names();
    for (std::size_t k = 0; k < all.size(); ++k) {
      const auto sys = train_system(cfg, corpus, assets, "baseline." + names[k], {k}, progress);
      report.baselines.push_back(evaluate_system(cfg, corpus, assets, sys));
      report.baseline_parameters += report.baselines.back().parameters;
    }
  }

  note(progress, "combine", "combining " + std::to_string(all.size()) + " decoder outputs");
  const auto lm = combine::train_lm(corpus.train_tgt, cfg.lm_order, cfg.lm_lambdas);
  lm.save(cfg.out("models/target.lm"));
  std::vector<std::vector<std::string>> systems;
  for (const auto& d : report.bmtl.decoders) systems.push_back(read_lines(d.hypothesis_path));
  const auto combined = combine::combine_corpus(systems, lm, cfg.combine_params());
  report.combined_path = cfg.out("hyp/combined.txt");
  write_lines(report.combined_path, combined);
  report.combined_bleu = score_tokenized(split_lines(combined), normalized_refs(cfg.resolve(cfg.test_tgt)));

  write_file(cfg.out("report.txt"), report.text());
  std::vector<std::pair<std::string, std::string>> manifest{
      {"config_hash", hex64(fnv1a64(cfg.canonical()))},
      {"seed", std::to_string(cfg.seed)},
  };
  for (const auto& ref : assets.refs) manifest.push_back({"asset." + ref.name, hex64(ref.hash)});
  manifest.push_back({"checkpoint.bmtl", hex64(hash_file(bmtl_sys.checkpoint_path))});
  manifest.push_back({"combined", hex64(hash_file(report.combined_path))});
  write_manifest(cfg.out("manifest.txt"), manifest);
  note(progress, "score", "report written to " + cfg.out("report.txt"));
  return report;
}

}  // namespace bmtl::pipeline
