#include "bmtl/seq2seq.hpp"

#include <cmath>

#include "bmtl/error.hpp"
#include "bmtl/util.hpp"

namespace bmtl::model {

void ModelConfig::validate() const {
  if (embedding_dim == 0) throw ValidationError("embedding_dim must be positive");
  if (encoder_hidden == 0) throw ValidationError("encoder_hidden must be positive");
  if (encoder_layers == 0) throw ValidationError("encoder_layers must be positive");
  if (decoder_hidden == 0) throw ValidationError("decoder_hidden must be positive");
  if (source_vocab_size == 0) throw ValidationError("source_vocab_size must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ValidationError("dropout must lie in [0, 1)");
  if (decoders.empty()) throw ValidationError("decoders: at least one decoder is required");
  for (std::size_t i = 0; i < decoders.size(); ++i) {
    if (decoders[i].name.empty()) throw ValidationError("decoders: empty decoder name");
    if (decoders[i].vocab_size == 0) throw ValidationError("decoder '" + decoders[i].name + "' has an empty vocabulary");
    for (std::size_t j = 0; j < i; ++j) {
      if (decoders[j].name == decoders[i].name) throw ValidationError("duplicate decoder name '" + decoders[i].name + "'");
    }
  }
}

std::size_t ModelConfig::decoder_index(const std::string& name) const {
  for (std::size_t i = 0; i < decoders.size(); ++i) {
    if (decoders[i].name == name) return i;
  }
  throw ValidationError("unknown decoder '" + name + "'");
}

ModelConfig ModelConfig::single(std::size_t k) const {
  ModelConfig c = *this;
  c.decoders = {decoders.at(k)};
  return c;
}

ParameterCounts count_parameters(const ModelConfig& c) {
  c.validate();
  const std::size_t e = c.embedding_dim, h = c.encoder_hidden, dh = c.decoder_hidden, ctx = 2 * h;
  auto gru = [](std::size_t in, std::size_t hid) { return 3 * hid * in + 3 * hid * hid + 3 * hid; };
  ParameterCounts pc;
  pc.source_embedding = c.source_vocab_size * e;
  for (std::size_t l = 0; l < c.encoder_layers; ++l) pc.encoder += 2 * gru(l == 0 ? e : ctx, h);
  pc.total = pc.shared();
  for (const auto& d : c.decoders) {
    ParameterCounts::Decoder dc;
    dc.name = d.name;
    dc.embedding = d.vocab_size * e;
    dc.init = ctx * dh + dh;
    dc.gru1 = gru(e, dh);
    dc.attention = dh * dh + ctx * dh + dh;
    dc.gru2 = gru(ctx, dh);
    dc.output = dh * e + ctx * e + e * e + e + e * d.vocab_size + d.vocab_size;
    dc.total = dc.embedding + dc.init + dc.gru1 + dc.attention + dc.gru2 + dc.output;
    pc.total += dc.total;
    pc.decoders.push_back(dc);
  }
  return pc;
}

namespace {

template <typename T>
struct Initializer {
  nn::ParameterStore<T>& store;
  std::mt19937_64 rng;

  void matrix(const std::string& name, std::size_t rows, std::size_t cols) {
    auto& p = store.add(name, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
    for (Eigen::Index i = 0; i < p.value.size(); ++i) {
      p.value.data()[i] = static_cast<T>((2.0 * uniform01(rng) - 1.0) * limit);
    }
  }
  void bias(const std::string& name, std::size_t cols) { store.add(name, 1, static_cast<Eigen::Index>(cols)); }
  void gru(const std::string& prefix, std::size_t in, std::size_t hid) {
    matrix(prefix + ".W", in, 3 * hid);
    matrix(prefix + ".U_zr", hid, 2 * hid);
    matrix(prefix + ".U_h", hid, hid);
    bias(prefix + ".b", 3 * hid);
  }
};

std::string enc_prefix(std::size_t layer, int dir) {
  return "enc.l" + std::to_string(layer) + (dir == 0 ? ".fw" : ".bw");
}

}  // namespace

template <typename T>
void allocate_parameters(const ModelConfig& c, nn::ParameterStore<T>& store, std::uint64_t seed) {
  c.validate();
  Initializer<T> init{store, std::mt19937_64(seed)};
  const std::size_t e = c.embedding_dim, h = c.encoder_hidden, dh = c.decoder_hidden, ctx = 2 * h;
  init.matrix("src.emb", c.source_vocab_size, e);
  for (std::size_t l = 0; l < c.encoder_layers; ++l) {
    for (int dir = 0; dir < 2; ++dir) init.gru(enc_prefix(l, dir), l == 0 ? e : ctx, h);
  }
  for (const auto& d : c.decoders) {
    const std::string p = "dec." + d.name;
    init.matrix(p + ".emb", d.vocab_size, e);
    init.matrix(p + ".init.W", ctx, dh);
    init.bias(p + ".init.b", dh);
    init.gru(p + ".gru1", e, dh);
    init.matrix(p + ".att.W", dh, dh);
    init.matrix(p + ".att.U", ctx, dh);
    init.matrix(p + ".att.v", dh, 1);
    init.gru(p + ".gru2", ctx, dh);
    init.matrix(p + ".out.W_s", dh, e);
    init.matrix(p + ".out.W_c", ctx, e);
    init.matrix(p + ".out.W_e", e, e);
    init.bias(p + ".out.b", e);
    init.matrix(p + ".out.W_o", e, d.vocab_size);
    init.bias(p + ".out.b_o", d.vocab_size);
  }
}

template void allocate_parameters<float>(const ModelConfig&, nn::ParameterStore<float>&, std::uint64_t);
template void allocate_parameters<double>(const ModelConfig&, nn::ParameterStore<double>&, std::uint64_t);

TokenBatch TokenBatch::from(const std::vector<std::vector<int>>& sequences) {
  TokenBatch b;
  b.rows = sequences.size();
  for (const auto& s : sequences) b.cols = std::max(b.cols, s.size());
  b.ids.assign(b.rows * b.cols, 0);
  for (std::size_t r = 0; r < b.rows; ++r) {
    b.lengths.push_back(sequences[r].size());
    std::copy(sequences[r].begin(), sequences[r].end(), b.ids.begin() + static_cast<std::ptrdiff_t>(r * b.cols));
  }
  return b;
}

std::vector<int> TokenBatch::column(std::size_t c) const {
  std::vector<int> out(rows);
  for (std::size_t r = 0; r < rows; ++r) out[r] = at(r, c);
  return out;
}

template <typename T>
nn::Matrix<T> TokenBatch::mask() const {
  nn::Matrix<T> m = nn::Matrix<T>::Zero(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < lengths[r]; ++c) m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = T(1);
  }
  return m;
}

template nn::Matrix<float> TokenBatch::mask<float>() const;
template nn::Matrix<double> TokenBatch::mask<double>() const;

template <typename T>
nn::Matrix<T> Dropout::mask(Eigen::Index rows, Eigen::Index cols) {
  nn::Matrix<T> m(rows, cols);
  const double keep = 1.0 - p;
  const T scale = static_cast<T>(1.0 / keep);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = uniform01(rng) < keep ? scale : T(0);
  return m;
}

template nn::Matrix<float> Dropout::mask<float>(Eigen::Index, Eigen::Index);
template nn::Matrix<double> Dropout::mask<double>(Eigen::Index, Eigen::Index);

template <typename T>
auto Seq2Seq<T>::bind_gru(const nn::ParameterStore<T>& store, const std::string& prefix, std::size_t hidden) const
    -> Gru {
  return Gru{&store.at(prefix + ".W"), &store.at(prefix + ".U_zr"), &store.at(prefix + ".U_h"),
             &store.at(prefix + ".b"), static_cast<Eigen::Index>(hidden)};
}

template <typename T>
Seq2Seq<T>::Seq2Seq(ModelConfig config, const nn::ParameterStore<T>& store) : config_(std::move(config)) {
  config_.validate();
  source_embedding_ = &store.at("src.emb");
  if (source_embedding_->value.rows() != static_cast<Eigen::Index>(config_.source_vocab_size)) {
    throw ValidationError("src.emb rows do not match source_vocab_size");
  }
  for (std::size_t l = 0; l < config_.encoder_layers; ++l) {
    encoder_.push_back({bind_gru(store, enc_prefix(l, 0), config_.encoder_hidden),
                        bind_gru(store, enc_prefix(l, 1), config_.encoder_hidden)});
  }
  for (const auto& d : config_.decoders) {
    const std::string p = "dec." + d.name;
    Decoder dec{};
    dec.embedding = &store.at(p + ".emb");
    dec.init_w = &store.at(p + ".init.W");
    dec.init_b = &store.at(p + ".init.b");
    dec.gru1 = bind_gru(store, p + ".gru1", config_.decoder_hidden);
    dec.att_w = &store.at(p + ".att.W");
    dec.att_u = &store.at(p + ".att.U");
    dec.att_v = &store.at(p + ".att.v");
    dec.gru2 = bind_gru(store, p + ".gru2", config_.decoder_hidden);
    dec.out_s = &store.at(p + ".out.W_s");
    dec.out_c = &store.at(p + ".out.W_c");
    dec.out_e = &store.at(p + ".out.W_e");
    dec.out_b = &store.at(p + ".out.b");
    dec.out_w = &store.at(p + ".out.W_o");
    dec.out_wb = &store.at(p + ".out.b_o");
    if (dec.out_w->value.cols() != static_cast<Eigen::Index>(d.vocab_size)) {
      throw ValidationError("decoder '" + d.name + "' output size does not match its vocabulary");
    }
    decoders_.push_back(dec);
  }
}

template <typename T>
auto Seq2Seq<T>::gru_input(Graph& g, const Gru& cell, Var x) const -> Var {
  return g.add(g.matmul(x, g.param(*cell.w)), g.param(*cell.b));
}

// z = s(x W_z + h U_z + b_z), r = s(x W_r + h U_r + b_r),
// c = tanh(x W_h + (r * h) U_h + b_h), h' = (1 - z) * h + z * c
template <typename T>
auto Seq2Seq<T>::gru_cell(Graph& g, const Gru& cell, Var xw, Var h) const -> Var {
  const Eigen::Index n = cell.hidden;
  Var zr = g.sigmoid(g.add(g.slice_cols(xw, 0, 2 * n), g.matmul(h, g.param(*cell.u_zr))));
  Var z = g.slice_cols(zr, 0, n);
  Var r = g.slice_cols(zr, n, n);
  Var cand = g.tanh(g.add(g.slice_cols(xw, 2 * n, n), g.matmul(g.mul(r, h), g.param(*cell.u_h))));
  return g.add(h, g.mul(z, g.sub(cand, h)));
}

template <typename T>
auto Seq2Seq<T>::encode(Graph& g, const TokenBatch& source, Dropout* dropout) const -> Encoded {
  if (source.cols == 0) throw ValidationError("encode: empty source batch");
  Encoded out;
  out.mask = source.mask<T>();
  const auto rows = static_cast<Eigen::Index>(source.rows);
  const std::size_t positions = source.cols;
  for (std::size_t r = 0; r < source.rows; ++r) {
    if (source.lengths[r] == 0) throw ValidationError("encode: empty source sentence in row " + std::to_string(r));
  }

  std::vector<Var> inputs(positions);
  const Var table = g.param(*source_embedding_);
  for (std::size_t t = 0; t < positions; ++t) {
    const auto col = source.column(t);
    inputs[t] = g.lookup(table, col);
  }
  std::vector<std::vector<T>> keep(positions, std::vector<T>(source.rows));
  for (std::size_t t = 0; t < positions; ++t) {
    for (std::size_t r = 0; r < source.rows; ++r) keep[t][r] = out.mask(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(t));
  }

  const Var zero = g.constant(nn::Matrix<T>::Zero(rows, static_cast<Eigen::Index>(config_.encoder_hidden)));
  for (const auto& layer : encoder_) {
    std::vector<Var> fw(positions), bw(positions);
    Var h = zero;
    for (std::size_t t = 0; t < positions; ++t) {
      Var next = gru_cell(g, layer[0], gru_input(g, layer[0], inputs[t]), h);
      h = g.blend_rows(keep[t], next, h);
      fw[t] = h;
    }
    h = zero;
    for (std::size_t i = positions; i-- > 0;) {
      Var next = gru_cell(g, layer[1], gru_input(g, layer[1], inputs[i]), h);
      h = g.blend_rows(keep[i], next, h);
      bw[i] = h;
    }
    for (std::size_t t = 0; t < positions; ++t) inputs[t] = g.concat_cols(fw[t], bw[t]);
  }
  out.states = std::move(inputs);
  if (dropout && dropout->p > 0.0) {
    for (auto& s : out.states) s = g.mul_const(s, dropout->mask<T>(rows, static_cast<Eigen::Index>(config_.context_dim())));
  }
  return out;
}

template <typename T>
auto Seq2Seq<T>::wrap(Graph& g, const std::vector<nn::Matrix<T>>& states, const nn::Matrix<T>& mask) const -> Encoded {
  Encoded out;
  out.mask = mask;
  for (const auto& s : states) out.states.push_back(g.constant(s));
  return out;
}

template <typename T>
auto Seq2Seq<T>::attention_keys(Graph& g, std::size_t k, const Encoded& enc) const -> Attention {
  Attention a;
  a.encoded = &enc;
  const Var u = g.param(*decoders_.at(k).att_u);
  for (const auto& s : enc.states) a.keys.push_back(g.matmul(s, u));
  return a;
}

template <typename T>
auto Seq2Seq<T>::initial_state(Graph& g, std::size_t k, const Encoded& enc) const -> Var {
  const auto& d = decoders_.at(k);
  Var mean = g.masked_mean(enc.states, enc.mask);
  return g.tanh(g.add(g.matmul(mean, g.param(*d.init_w)), g.param(*d.init_b)));
}

template <typename T>
auto Seq2Seq<T>::step(Graph& g, std::size_t k, const Attention& att, Var prev_hidden,
                      std::span<const int> prev_tokens, Dropout* dropout) const -> Step {
  const auto& d = decoders_.at(k);
  Step s;
  Var emb = g.lookup(g.param(*d.embedding), prev_tokens);
  Var s1 = gru_cell(g, d.gru1, gru_input(g, d.gru1, emb), prev_hidden);
  Var query = g.matmul(s1, g.param(*d.att_w));
  s.context = g.mlp_attention(query, att.keys, att.encoded->states, g.param(*d.att_v), att.encoded->mask, &s.alpha);
  s.hidden = gru_cell(g, d.gru2, gru_input(g, d.gru2, s.context), s1);
  Var pre = g.add(g.matmul(s.hidden, g.param(*d.out_s)), g.matmul(s.context, g.param(*d.out_c)));
  pre = g.tanh(g.add(g.add(pre, g.matmul(emb, g.param(*d.out_e))), g.param(*d.out_b)));
  if (dropout && dropout->p > 0.0) {
    const auto& v = g.value(pre);
    pre = g.mul_const(pre, dropout->mask<T>(v.rows(), v.cols()));
  }
  s.logits = g.add(g.matmul(pre, g.param(*d.out_w)), g.param(*d.out_wb));
  return s;
}

template <typename T>
auto Seq2Seq<T>::teacher_forced(Graph& g, std::size_t k, const Attention& att, const TokenBatch& targets,
                                Dropout* dropout) const -> std::vector<Var> {
  std::vector<Var> logits;
  Var h = initial_state(g, k, *att.encoded);
  for (std::size_t t = 0; t + 1 < targets.cols; ++t) {
    const auto prev = targets.column(t);
    Step s = step(g, k, att, h, prev, dropout);
    logits.push_back(s.logits);
    h = s.hidden;
  }
  return logits;
}

template class Seq2Seq<float>;
template class Seq2Seq<double>;

template <typename T>
EncoderOutput<T> encode_source(const ModelConfig& config, const nn::ParameterStore<T>& store,
                               std::span<const int> source_ids) {
  for (int id : source_ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= config.source_vocab_size) {
      throw ValidationError("source id " + std::to_string(id) + " outside the source vocabulary");
    }
  }
  Seq2Seq<T> model(config, store);
  nn::Graph<T> g(false);
  auto batch = TokenBatch::from({std::vector<int>(source_ids.begin(), source_ids.end())});
  auto enc = model.encode(g, batch, nullptr);
  EncoderOutput<T> out;
  out.states.resize(static_cast<Eigen::Index>(enc.states.size()), static_cast<Eigen::Index>(config.context_dim()));
  for (std::size_t t = 0; t < enc.states.size(); ++t) out.states.row(static_cast<Eigen::Index>(t)) = g.value(enc.states[t]);
  out.mask.assign(enc.states.size(), true);
  return out;
}

namespace {

template <typename T>
typename Seq2Seq<T>::Encoded wrap_single(nn::Graph<T>& g, const EncoderOutput<T>& enc) {
  typename Seq2Seq<T>::Encoded e;
  e.mask = nn::Matrix<T>::Zero(1, enc.states.rows());
  for (Eigen::Index t = 0; t < enc.states.rows(); ++t) {
    e.states.push_back(g.constant(enc.states.row(t)));
    e.mask(0, t) = enc.mask[static_cast<std::size_t>(t)] ? T(1) : T(0);
  }
  return e;
}

}  // namespace

template <typename T>
std::vector<T> attention_weights(const ModelConfig& config, const nn::ParameterStore<T>& store, std::size_t k,
                                 const nn::Matrix<T>& query, const EncoderOutput<T>& enc) {
  Seq2Seq<T> model(config, store);
  nn::Graph<T> g(false);
  auto e = wrap_single(g, enc);
  auto att = model.attention_keys(g, k, e);
  const std::string p = "dec." + config.decoders.at(k).name;
  auto q = g.matmul(g.constant(query), g.param(store.at(p + ".att.W")));
  nn::Matrix<T> alpha;
  g.mlp_attention(q, att.keys, e.states, g.param(store.at(p + ".att.v")), e.mask, &alpha);
  return std::vector<T>(alpha.data(), alpha.data() + alpha.size());
}

template <typename T>
DecoderState<T> initial_decoder_state(const ModelConfig& config, const nn::ParameterStore<T>& store, std::size_t k,
                                      const EncoderOutput<T>& enc) {
  Seq2Seq<T> model(config, store);
  nn::Graph<T> g(false);
  auto e = wrap_single(g, enc);
  DecoderState<T> s;
  s.hidden = g.value(model.initial_state(g, k, e));
  s.context = nn::Matrix<T>::Zero(1, static_cast<Eigen::Index>(config.context_dim()));
  s.last_token = 1;  // BOS
  return s;
}

template <typename T>
std::pair<DecoderState<T>, std::vector<T>> conditional_gru_step(const ModelConfig& config,
                                                                const nn::ParameterStore<T>& store, std::size_t k,
                                                                const DecoderState<T>& prev,
                                                                const EncoderOutput<T>& enc) {
  Seq2Seq<T> model(config, store);
  nn::Graph<T> g(false);
  auto e = wrap_single(g, enc);
  auto att = model.attention_keys(g, k, e);
  const int token = prev.last_token;
  auto s = model.step(g, k, att, g.constant(prev.hidden), std::span<const int>(&token, 1), nullptr);
  DecoderState<T> next;
  next.hidden = g.value(s.hidden);
  next.context = g.value(s.context);
  next.last_token = prev.last_token;
  for (Eigen::Index i = 0; i < next.hidden.size(); ++i) {
    if (!std::isfinite(static_cast<double>(next.hidden.data()[i]))) throw NumericError("non-finite decoder state");
  }
  const auto& l = g.value(s.logits);
  std::vector<T> logits(l.data(), l.data() + l.size());
  for (T v : logits) {
    if (!std::isfinite(static_cast<double>(v))) throw NumericError("non-finite logits");
  }
  return {std::move(next), std::move(logits)};
}

template <typename T>
std::vector<nn::Matrix<T>> bmtl_forward(const ModelConfig& config, const nn::ParameterStore<T>& store,
                                        std::span<const int> source_ids,
                                        const std::map<std::string, std::vector<int>>& targets) {
  for (const auto& d : config.decoders) {
    if (!targets.count(d.name)) throw ValidationError("missing target sequence for decoder '" + d.name + "'");
  }
  Seq2Seq<T> model(config, store);
  nn::Graph<T> g(false);
  auto enc = model.encode(g, TokenBatch::from({std::vector<int>(source_ids.begin(), source_ids.end())}), nullptr);
  std::vector<nn::Matrix<T>> out;
  for (std::size_t k = 0; k < config.decoders.size(); ++k) {
    const auto& tgt = targets.at(config.decoders[k].name);
    auto att = model.attention_keys(g, k, enc);
    auto logits = model.teacher_forced(g, k, att, TokenBatch::from({tgt}), nullptr);
    nn::Matrix<T> m(static_cast<Eigen::Index>(logits.size()),
                    static_cast<Eigen::Index>(config.decoders[k].vocab_size));
    for (std::size_t t = 0; t < logits.size(); ++t) m.row(static_cast<Eigen::Index>(t)) = g.value(logits[t]);
    out.push_back(std::move(m));
  }
  return out;
}

#define BMTL_INSTANTIATE(T)                                                                                   \
  template EncoderOutput<T> encode_source<T>(const ModelConfig&, const nn::ParameterStore<T>&,                \
                                             std::span<const int>);                                           \
  template std::vector<T> attention_weights<T>(const ModelConfig&, const nn::ParameterStore<T>&, std::size_t, \
                                               const nn::Matrix<T>&, const EncoderOutput<T>&);                \
  template DecoderState<T> initial_decoder_state<T>(const ModelConfig&, const nn::ParameterStore<T>&,         \
                                                    std::size_t, const EncoderOutput<T>&);                    \
  template std::pair<DecoderState<T>, std::vector<T>> conditional_gru_step<T>(                                \
      const ModelConfig&, const nn::ParameterStore<T>&, std::size_t, const DecoderState<T>&,                  \
      const EncoderOutput<T>&);                                                                               \
  template std::vector<nn::Matrix<T>> bmtl_forward<T>(const ModelConfig&, const nn::ParameterStore<T>&,       \
                                                      std::span<const int>,                                   \
                                                      const std::map<std::string, std::vector<int>>&);

BMTL_INSTANTIATE(float)
BMTL_INSTANTIATE(double)
#undef BMTL_INSTANTIATE

}  // namespace bmtl::model
