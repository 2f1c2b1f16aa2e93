// Command-line front end: one subcommand per pipeline stage plus the full run.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <utility>
#include <vector>

#include "bmtl/bleu.hpp"
#include "bmtl/combine.hpp"
#include "bmtl/decoding.hpp"
#include "bmtl/error.hpp"
#include "bmtl/pipeline.hpp"
#include "bmtl/seq2seq.hpp"
#include "bmtl/subword.hpp"
#include "bmtl/textpipe.hpp"
#include "bmtl/training.hpp"
#include "bmtl/util.hpp"

namespace fs = std::filesystem;
using namespace bmtl;
using Manifest = std::vector<std::pair<std::string, std::string>>;

namespace {

constexpr int kUsage = 1;
constexpr int kValidation = 2;
constexpr int kRuntime = 3;

Manifest manifest_header(const std::string& command, std::uint64_t seed) {
  return {{"command", command}, {"version", BMTL_VERSION}, {"seed", std::to_string(seed)}};
}

void add_input(Manifest& m, const std::string& key, const std::string& path) {
  m.push_back({"input." + key, path});
  m.push_back({"hash." + key, hex64(hash_file(path))});
}

void add_output(Manifest& m, const std::string& key, const std::string& path) {
  m.push_back({"output." + key, path});
  m.push_back({"hash.output." + key, hex64(hash_file(path))});
}

pipeline::ExperimentConfig load_config(const std::string& path, bool check_files = true) {
  if (!fs::is_regular_file(path)) throw ValidationError("config: no such file " + path);
  auto cfg = pipeline::ExperimentConfig::load(path);
  cfg.validate(check_files);
  fs::create_directories(cfg.resolve(cfg.output_dir));
  return cfg;
}

void require_file(const std::string& path, const std::string& flag) {
  if (!fs::is_regular_file(path)) throw ValidationError(flag + ": no such file " + path);
}

struct Args {
  std::string config;
  std::string system = "bmtl";
  bool resume = false;

  std::string input, output, model_prefix;
  bool ids = false;

  std::string checkpoint, decoder;
  std::size_t beam = 4;
  double alpha = 1.0;
  bool no_verify = false;

  std::vector<std::string> hyps;
  std::string lm, lm_train;
  std::size_t lm_order = 3;
  combine::CombineParams combine;

  std::string hyp, ref;
  bool detok = false;
};

int cmd_preprocess(const Args& a) {
  const auto cfg = load_config(a.config);
  pipeline::preprocess(cfg);
  auto m = manifest_header("preprocess", cfg.seed);
  m.push_back({"config_hash", hex64(fnv1a64(cfg.canonical()))});
  for (auto [key, path] : {std::pair{"train_src", cfg.train_src}, {"train_tgt", cfg.train_tgt},
                           {"dev_src", cfg.dev_src}, {"dev_tgt", cfg.dev_tgt},
                           {"test_src", cfg.test_src}, {"test_tgt", cfg.test_tgt}}) {
    add_input(m, key, cfg.resolve(path));
  }
  for (const char* f : {"train.src", "train.tgt", "dev.src", "dev.tgt", "test.src", "test.tgt", "truecase.src",
                        "truecase.tgt"}) {
    add_output(m, f, cfg.out(std::string("prep/") + f));
  }
  pipeline::write_manifest(cfg.out("manifest.preprocess.txt"), m);
  return 0;
}

int cmd_subword_train(const Args& a) {
  const auto cfg = load_config(a.config);
  const auto corpus = pipeline::load_preprocessed(cfg);
  const auto assets = pipeline::learn_subwords(cfg, corpus);
  auto m = manifest_header("subword-train", cfg.seed);
  m.push_back({"config_hash", hex64(fnv1a64(cfg.canonical()))});
  add_input(m, "train.src", cfg.out("prep/train.src"));
  add_input(m, "train.tgt", cfg.out("prep/train.tgt"));
  for (const auto& r : assets.refs) add_output(m, r.name, r.path);
  pipeline::write_manifest(cfg.out("manifest.subword-train.txt"), m);
  std::cout << "src\t" << assets.source.vocab.size() << '\n';
  const auto names = cfg.decoder_names();
  for (std::size_t k = 0; k < names.size(); ++k) std::cout << names[k] << '\t' << assets.targets[k].vocab.size() << '\n';
  return 0;
}

int cmd_subword_apply(const Args& a) {
  require_file(a.model_prefix + ".merges", "--model");
  require_file(a.model_prefix + ".vocab", "--model");
  require_file(a.input, "--input");
  const auto bpe = pipeline::load_bpe(a.model_prefix);
  std::vector<std::string> out;
  for (const auto& words : pipeline::read_tokenized(a.input)) {
    std::vector<std::string> parts;
    if (a.ids) {
      for (int id : subword::encode_sentence(bpe.vocab, bpe.merges, words)) parts.push_back(std::to_string(id));
    } else {
      for (const auto& w : words) {
        for (auto& t : subword::segment_word(bpe.merges, w)) parts.push_back(std::move(t));
      }
    }
    out.push_back(join(parts, " "));
  }
  write_lines(a.output, out);
  auto m = manifest_header("subword-apply", 0);
  add_input(m, "merges", a.model_prefix + ".merges");
  add_input(m, "vocab", a.model_prefix + ".vocab");
  add_input(m, "text", a.input);
  add_output(m, "segmented", a.output);
  pipeline::write_manifest(a.output + ".manifest", m);
  return 0;
}

int cmd_train(const Args& a) {
  const auto cfg = load_config(a.config);
  const auto decoders = pipeline::system_decoders(cfg, a.system);
  const auto corpus = pipeline::load_preprocessed(cfg);
  const auto assets = pipeline::load_subwords(cfg);
  const auto sys = pipeline::train_system(cfg, corpus, assets, a.system, decoders, &std::cerr, a.resume);
  auto m = manifest_header("train", cfg.seed);
  m.push_back({"config_hash", hex64(fnv1a64(cfg.canonical()))});
  m.push_back({"system", a.system});
  for (const auto& r : assets.refs) m.push_back({"asset." + r.name, hex64(r.hash)});
  m.push_back({"updates", std::to_string(sys.checkpoint.state.update)});
  m.push_back({"best_update", std::to_string(sys.checkpoint.state.best_update)});
  add_output(m, "log", sys.log_path);
  add_output(m, "checkpoint", sys.checkpoint_path);
  pipeline::write_manifest(cfg.out("manifest.train." + a.system + ".txt"), m);
  return 0;
}

const training::AssetRef& find_asset(const training::Checkpoint& ckpt, const std::string& name) {
  for (const auto& r : ckpt.assets) {
    if (r.name == name) return r;
  }
  throw ValidationError("checkpoint has no asset '" + name + "'");
}

std::string asset_prefix(const training::AssetRef& ref) {
  const std::string suffix = ".merges";
  return ref.path.substr(0, ref.path.size() - suffix.size());
}

int cmd_translate(const Args& a) {
  require_file(a.checkpoint, "--checkpoint");
  require_file(a.input, "--input");
  const auto ckpt = training::load_checkpoint(a.checkpoint, !a.no_verify);
  std::string decoder = a.decoder;
  if (decoder.empty()) decoder = ckpt.config.decoders.front().name;
  ckpt.config.decoder_index(decoder);
  const auto source = pipeline::load_bpe(asset_prefix(find_asset(ckpt, "src.merges")));
  const auto target = pipeline::load_bpe(asset_prefix(find_asset(ckpt, decoder + ".merges")));
  std::vector<std::vector<int>> sources;
  for (const auto& words : pipeline::read_tokenized(a.input)) {
    sources.push_back(subword::encode_sentence(source.vocab, source.merges, words));
  }
  const auto& params = ckpt.best_params.size() ? ckpt.best_params : ckpt.params;
  model::Seq2Seq<float> m(ckpt.config, params);
  const auto t = decoding::translate_corpus(m, decoder, target.vocab, sources, {a.beam, a.alpha, 0});
  decoding::write_translation(t, a.output, a.output + ".scores");
  auto man = manifest_header("translate", 0);
  add_input(man, "checkpoint", a.checkpoint);
  add_input(man, "source", a.input);
  man.push_back({"decoder", decoder});
  man.push_back({"beam_size", std::to_string(a.beam)});
  man.push_back({"length_alpha", format_double(a.alpha)});
  add_output(man, "hypotheses", a.output);
  pipeline::write_manifest(a.output + ".manifest", man);
  return 0;
}

int cmd_combine(const Args& a) {
  if (a.hyps.empty()) throw ValidationError("--hyp: at least one hypothesis file is required");
  for (const auto& h : a.hyps) require_file(h, "--hyp");
  auto m = manifest_header("combine", 0);
  combine::NGramLM lm;
  if (!a.lm.empty()) {
    require_file(a.lm, "--lm");
    lm = combine::NGramLM::load(a.lm);
    add_input(m, "lm", a.lm);
  } else if (!a.lm_train.empty()) {
    require_file(a.lm_train, "--lm-train");
    std::vector<combine::Words> corpus;
    for (const auto& line : read_lines(a.lm_train)) corpus.push_back(split_whitespace(line));
    std::vector<double> lambdas(a.lm_order + 1, 0.0);
    if (a.lm_order == 3) {
      lambdas = {0.5, 0.3, 0.15, 0.05};
    } else {
      for (auto& l : lambdas) l = 1.0 / static_cast<double>(lambdas.size());
    }
    lm = combine::train_lm(corpus, a.lm_order, lambdas);
    add_input(m, "lm_train", a.lm_train);
  } else {
    throw ValidationError("--lm or --lm-train is required");
  }
  std::vector<std::vector<std::string>> systems;
  for (std::size_t i = 0; i < a.hyps.size(); ++i) {
    systems.push_back(read_lines(a.hyps[i]));
    add_input(m, "hyp" + std::to_string(i), a.hyps[i]);
  }
  write_lines(a.output, combine::combine_corpus(systems, lm, a.combine));
  m.push_back({"beam_size", std::to_string(a.combine.beam_size)});
  m.push_back({"radius", std::to_string(a.combine.radius)});
  m.push_back({"w_lm", format_double(a.combine.w_lm)});
  m.push_back({"w_sys", format_double(a.combine.w_sys)});
  m.push_back({"w_len", format_double(a.combine.w_len)});
  add_output(m, "combined", a.output);
  pipeline::write_manifest(a.output + ".manifest", m);
  return 0;
}

int cmd_score(const Args& a) {
  require_file(a.hyp, "--hyp");
  require_file(a.ref, "--ref");
  auto hyps = read_lines(a.hyp);
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    if (a.detok) hyps[i] = textpipe::detokenize(textpipe::detruecase(split_whitespace(hyps[i])));
    hyps[i] = textpipe::normalize_text(hyps[i], i + 1);
  }
  auto refs = read_lines(a.ref);
  for (std::size_t i = 0; i < refs.size(); ++i) refs[i] = textpipe::normalize_text(refs[i], i + 1);
  std::cout << bleu::corpus_bleu(hyps, refs).format() << '\n';
  return 0;
}

int cmd_params(const Args& a) {
  const auto cfg = load_config(a.config, false);
  // Vocabulary sizes are not known before segmentation; the budgets stand in.
  const auto mc = cfg.model_config(cfg.src_bpe, cfg.tgt_bpe);
  const auto c = model::count_parameters(mc);
  std::cout << "source_embedding\t" << c.source_embedding << '\n' << "encoder\t" << c.encoder << '\n';
  for (const auto& d : c.decoders) {
    std::cout << "decoder." << d.name << "\t" << d.total << "\t(embedding " << d.embedding << ", init " << d.init
              << ", gru1 " << d.gru1 << ", attention " << d.attention << ", gru2 " << d.gru2 << ", output "
              << d.output << ")\n";
  }
  std::cout << "bmtl_total\t" << c.total << '\n';
  std::size_t baselines = 0;
  for (std::size_t k = 0; k < mc.decoders.size(); ++k) {
    const auto b = model::count_parameters(mc.single(k)).total;
    std::cout << "baseline." << mc.decoders[k].name << "\t" << b << '\n';
    baselines += b;
  }
  std::cout << "baselines_total\t" << baselines << '\n';
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", 100.0 * (1.0 - static_cast<double>(c.total) / static_cast<double>(baselines)));
  std::cout << "reduction\t" << buf << "%\n";
  return 0;
}

int cmd_pipeline(const Args& a) {
  const auto cfg = load_config(a.config);
  const auto report = pipeline::run_pipeline(cfg, &std::cerr);
  std::cout << report.text();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-decoder neural machine translation toolkit"};
  app.require_subcommand(1);
  Args a;

  auto* pre = app.add_subcommand("preprocess", "normalise, tokenise and truecase the configured corpora");
  pre->add_option("--config", a.config, "experiment config")->required();

  auto* swt = app.add_subcommand("subword-train", "learn source and target merge tables");
  swt->add_option("--config", a.config, "experiment config")->required();

  auto* swa = app.add_subcommand("subword-apply", "segment a tokenised file");
  swa->add_option("--model", a.model_prefix, "merge/vocab prefix (PREFIX.merges, PREFIX.vocab)")->required();
  swa->add_option("--input", a.input, "tokenised text")->required();
  swa->add_option("--output", a.output, "segmented text")->required();
  swa->add_flag("--ids", a.ids, "write ids with BOS/EOS instead of subword strings");

  auto* tr = app.add_subcommand("train", "train the multi-decoder model or one baseline");
  tr->add_option("--config", a.config, "experiment config")->required();
  tr->add_option("--system", a.system, "bmtl or baseline.<decoder>");
  tr->add_flag("--resume", a.resume, "continue from the existing checkpoint");

  auto* tl = app.add_subcommand("translate", "decode a tokenised source file");
  tl->add_option("--checkpoint", a.checkpoint, "model checkpoint")->required();
  tl->add_option("--decoder", a.decoder, "decoder name (default: first)");
  tl->add_option("--input", a.input, "tokenised source")->required();
  tl->add_option("--output", a.output, "hypothesis file")->required();
  tl->add_option("--beam", a.beam, "beam size (1: greedy)")->check(CLI::PositiveNumber);
  tl->add_option("--alpha", a.alpha, "length normalisation exponent")->check(CLI::NonNegativeNumber);
  tl->add_flag("--no-verify", a.no_verify, "skip vocabulary hash checks");

  auto* cb = app.add_subcommand("combine", "combine line-aligned hypothesis files");
  cb->add_option("--hyp", a.hyps, "hypothesis files")->required()->delimiter(',');
  cb->add_option("--lm", a.lm, "saved n-gram model");
  cb->add_option("--lm-train", a.lm_train, "tokenised text to train the n-gram model on");
  cb->add_option("--lm-order", a.lm_order, "order when training")->check(CLI::Range(1, 3));
  cb->add_option("--output", a.output, "combined output")->required();
  cb->add_option("--beam", a.combine.beam_size, "search beam (0: unlimited)");
  cb->add_option("--radius", a.combine.radius, "lookahead radius");
  cb->add_option("--w-lm", a.combine.w_lm, "language model weight");
  cb->add_option("--w-sys", a.combine.w_sys, "system confidence weight");
  cb->add_option("--w-len", a.combine.w_len, "length bonus");

  auto* sc = app.add_subcommand("score", "corpus BLEU");
  sc->add_option("--hyp", a.hyp, "hypotheses")->required();
  sc->add_option("--ref", a.ref, "references")->required();
  sc->add_flag("--detok", a.detok, "hypotheses are tokenised and truecased");

  auto* pa = app.add_subcommand("params", "parameter counts for a config");
  pa->add_option("--config", a.config, "experiment config")->required();

  auto* pl = app.add_subcommand("pipeline", "run every stage and write report.txt");
  pl->add_option("--config", a.config, "experiment config")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "bmtl: error: " << e.what() << '\n';
    return kUsage;
  }

  try {
    if (pre->parsed()) return cmd_preprocess(a);
    if (swt->parsed()) return cmd_subword_train(a);
    if (swa->parsed()) return cmd_subword_apply(a);
    if (tr->parsed()) return cmd_train(a);
    if (tl->parsed()) return cmd_translate(a);
    if (cb->parsed()) return cmd_combine(a);
    if (sc->parsed()) return cmd_score(a);
    if (pa->parsed()) return cmd_params(a);
    if (pl->parsed()) return cmd_pipeline(a);
  } catch (const ValidationError& e) {
    std::cerr << "bmtl: invalid input: " << e.what() << '\n';
    return kValidation;
  } catch (const DecodeError& e) {
    std::cerr << "bmtl: invalid input: " << e.what() << '\n';
    return kValidation;
  } catch (const std::exception& e) {
    std::cerr << "bmtl: failed: " << e.what() << '\n';
    return kRuntime;
  }
  return kUsage;
}
