#include <doctest.h>

#include <cmath>
#include <random>

#include "bmtl/error.hpp"
#include "bmtl/optim.hpp"
#include "bmtl/seq2seq.hpp"
#include "bmtl/util.hpp"

using namespace bmtl;
using namespace bmtl::model;
using Mat = nn::Matrix<double>;

namespace {

ModelConfig tiny(std::size_t decoders = 2) {
  ModelConfig c;
  c.embedding_dim = 4;
  c.encoder_hidden = 3;
  c.encoder_layers = 1;
  c.decoder_hidden = 5;
  c.dropout = 0.0;
  c.source_vocab_size = 9;
  const std::size_t sizes[] = {7, 8, 6};
  for (std::size_t k = 0; k < decoders; ++k) c.decoders.push_back({"d" + std::to_string(k), sizes[k % 3]});
  return c;
}

nn::ParameterStore<double> random_store(const ModelConfig& c, std::uint64_t seed) {
  nn::ParameterStore<double> s;
  allocate_parameters(c, s, seed);
  std::mt19937_64 rng(seed + 100);
  for (auto& p : s) {
    for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = uniform01(rng) - 0.5;
  }
  return s;
}

// Scalar re-statement of the GRU used everywhere in the model.
std::vector<double> gru_oracle(const nn::ParameterStore<double>& s, const std::string& p, const std::vector<double>& x,
                               const std::vector<double>& h) {
  const auto& W = s.at(p + ".W").value;
  const auto& Uzr = s.at(p + ".U_zr").value;
  const auto& Uh = s.at(p + ".U_h").value;
  const auto& b = s.at(p + ".b").value;
  const std::size_t n = h.size();
  auto sigmoid = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  std::vector<double> z(n), r(n), out(n);
  for (std::size_t j = 0; j < n; ++j) {
    double az = b(0, j), ar = b(0, n + j);
    for (std::size_t i = 0; i < x.size(); ++i) {
      az += x[i] * W(i, j);
      ar += x[i] * W(i, n + j);
    }
    for (std::size_t i = 0; i < n; ++i) {
      az += h[i] * Uzr(i, j);
      ar += h[i] * Uzr(i, n + j);
    }
    z[j] = sigmoid(az);
    r[j] = sigmoid(ar);
  }
  for (std::size_t j = 0; j < n; ++j) {
    double ac = b(0, 2 * n + j);
    for (std::size_t i = 0; i < x.size(); ++i) ac += x[i] * W(i, 2 * n + j);
    for (std::size_t i = 0; i < n; ++i) ac += r[i] * h[i] * Uh(i, j);
    out[j] = (1 - z[j]) * h[j] + z[j] * std::tanh(ac);
  }
  return out;
}

std::vector<double> row_of(const Mat& m, Eigen::Index r) {
  return std::vector<double>(m.row(r).data(), m.row(r).data() + m.cols());
}

std::vector<double> times(const std::vector<double>& x, const Mat& w) {
  std::vector<double> y(static_cast<std::size_t>(w.cols()), 0.0);
  for (Eigen::Index j = 0; j < w.cols(); ++j) {
    for (std::size_t i = 0; i < x.size(); ++i) y[static_cast<std::size_t>(j)] += x[i] * w(static_cast<Eigen::Index>(i), j);
  }
  return y;
}

std::vector<double> attention_oracle(const nn::ParameterStore<double>& s, const std::string& p, const Mat& query,
                                     const Mat& states) {
  const auto q = times(row_of(query, 0), s.at(p + ".att.W").value);
  const auto& v = s.at(p + ".att.v").value;
  std::vector<double> e(static_cast<std::size_t>(states.rows()));
  double zmax = -1e300;
  for (Eigen::Index t = 0; t < states.rows(); ++t) {
    const auto k = times(row_of(states, t), s.at(p + ".att.U").value);
    double score = 0;
    for (std::size_t i = 0; i < q.size(); ++i) score += v(static_cast<Eigen::Index>(i), 0) * std::tanh(q[i] + k[i]);
    e[static_cast<std::size_t>(t)] = score;
    zmax = std::max(zmax, score);
  }
  double z = 0;
  for (auto& x : e) z += (x = std::exp(x - zmax));
  for (auto& x : e) x /= z;
  return e;
}

}  // namespace

TEST_CASE("encoder output shape") {
  const auto c = tiny();
  const auto s = random_store(c, 1);
  const std::vector<int> src{1, 4, 5, 6, 2};
  auto enc = encode_source(c, s, src);
  CHECK(enc.states.rows() == 5);
  CHECK(enc.states.cols() == 6);
  CHECK(enc.mask == std::vector<bool>(5, true));
  CHECK_THROWS_AS(encode_source(c, s, std::vector<int>{1, 99}), ValidationError);
}

TEST_CASE("zero parameters give zero states and uniform logits") {
  const auto c = tiny();
  nn::ParameterStore<double> s;
  allocate_parameters(c, s, 3);
  for (auto& p : s) p.value.setZero();
  const std::vector<int> src{1, 4, 2};
  auto enc = encode_source(c, s, src);
  CHECK(enc.states.isZero());
  auto st = initial_decoder_state(c, s, 0, enc);
  CHECK(st.hidden.isZero());
  auto [next, logits] = conditional_gru_step(c, s, 0, st, enc);
  CHECK(next.hidden.isZero());
  for (double l : logits) CHECK(l == 0.0);
}

TEST_CASE("encoder matches the scalar oracle") {
  const auto c = tiny();
  const auto s = random_store(c, 2);
  const std::vector<int> src{1, 3, 7, 2};
  auto enc = encode_source(c, s, src);
  const auto& E = s.at("src.emb").value;
  std::vector<std::vector<double>> fw(src.size()), bw(src.size());
  std::vector<double> h(3, 0.0);
  for (std::size_t t = 0; t < src.size(); ++t) fw[t] = h = gru_oracle(s, "enc.l0.fw", row_of(E, src[t]), h);
  h.assign(3, 0.0);
  for (std::size_t t = src.size(); t-- > 0;) bw[t] = h = gru_oracle(s, "enc.l0.bw", row_of(E, src[t]), h);
  for (std::size_t t = 0; t < src.size(); ++t) {
    for (int i = 0; i < 3; ++i) {
      CHECK(enc.states(Eigen::Index(t), i) == doctest::Approx(fw[t][i]).epsilon(1e-12));
      CHECK(enc.states(Eigen::Index(t), 3 + i) == doctest::Approx(bw[t][i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("attention weights") {
  const auto c = tiny();
  auto s = random_store(c, 4);
  const std::vector<int> src{1, 3, 7, 5, 2};
  auto enc = encode_source(c, s, src);
  Mat query(1, 5);
  query << 0.3, -0.2, 0.9, 0.1, -0.6;

  SUBCASE("matches the formula") {
    auto w = attention_weights(c, s, 1, query, enc);
    auto want = attention_oracle(s, "dec.d1", query, enc.states);
    REQUIRE(w.size() == want.size());
    for (std::size_t i = 0; i < w.size(); ++i) CHECK(w[i] == doctest::Approx(want[i]).epsilon(1e-12));
  }
  SUBCASE("zero projections are uniform") {
    s.at("dec.d0.att.W").value.setZero();
    s.at("dec.d0.att.U").value.setZero();
    for (double x : attention_weights(c, s, 0, query, enc)) CHECK(x == doctest::Approx(0.2));
  }
  SUBCASE("a single unmasked position takes all the weight") {
    enc.mask = {false, false, true, false, false};
    auto w = attention_weights(c, s, 0, query, enc);
    CHECK(w[2] == 1.0);
    CHECK(w[0] == 0.0);
  }
}

TEST_CASE("conditional GRU step matches the scalar oracle") {
  const auto c = tiny();
  const auto s = random_store(c, 5);
  const std::vector<int> src{1, 8, 4, 2};
  auto enc = encode_source(c, s, src);
  auto st = initial_decoder_state(c, s, 1, enc);
  st.last_token = 3;
  auto [next, logits] = conditional_gru_step(c, s, 1, st, enc);

  const std::string p = "dec.d1";
  const auto emb = row_of(s.at(p + ".emb").value, 3);
  const auto s1 = gru_oracle(s, p + ".gru1", emb, row_of(st.hidden, 0));
  Mat q(1, 5);
  for (int i = 0; i < 5; ++i) q(0, i) = s1[i];
  const auto alpha = attention_oracle(s, p, q, enc.states);
  std::vector<double> ctx(6, 0.0);
  for (std::size_t t = 0; t < alpha.size(); ++t) {
    for (int i = 0; i < 6; ++i) ctx[i] += alpha[t] * enc.states(Eigen::Index(t), i);
  }
  const auto s2 = gru_oracle(s, p + ".gru2", ctx, s1);
  const auto a = times(s2, s.at(p + ".out.W_s").value);
  const auto b = times(ctx, s.at(p + ".out.W_c").value);
  const auto e = times(emb, s.at(p + ".out.W_e").value);
  std::vector<double> pre(4);
  for (int i = 0; i < 4; ++i) pre[i] = std::tanh(a[i] + b[i] + e[i] + s.at(p + ".out.b").value(0, i));
  auto want = times(pre, s.at(p + ".out.W_o").value);
  for (std::size_t i = 0; i < want.size(); ++i) want[i] += s.at(p + ".out.b_o").value(0, Eigen::Index(i));

  for (int i = 0; i < 5; ++i) CHECK(next.hidden(0, i) == doctest::Approx(s2[i]).epsilon(1e-12));
  for (int i = 0; i < 6; ++i) CHECK(next.context(0, i) == doctest::Approx(ctx[i]).epsilon(1e-12));
  REQUIRE(logits.size() == want.size());
  for (std::size_t i = 0; i < want.size(); ++i) CHECK(logits[i] == doctest::Approx(want[i]).epsilon(1e-12));
}

TEST_CASE("a single source position is attended completely") {
  const auto c = tiny();
  const auto s = random_store(c, 6);
  const std::vector<int> src{4};
  auto enc = encode_source(c, s, src);
  auto st = initial_decoder_state(c, s, 0, enc);
  auto [next, logits] = conditional_gru_step(c, s, 0, st, enc);
  for (int i = 0; i < 6; ++i) CHECK(next.context(0, i) == enc.states(0, i));
}

TEST_CASE("decoders share only the encoder") {
  const auto c = tiny(3);
  auto s = random_store(c, 7);
  const std::vector<int> src{1, 5, 6, 2};
  const std::map<std::string, std::vector<int>> tgt{{"d0", {1, 4, 5, 2}}, {"d1", {1, 3, 2}}, {"d2", {1, 5, 4, 3, 2}}};
  const auto before = bmtl_forward(c, s, src, tgt);
  for (auto& p : s) {
    if (p.name.rfind("dec.d1.", 0) == 0) p.value.array() += 0.25;
  }
  const auto after = bmtl_forward(c, s, src, tgt);
  CHECK(after[0] == before[0]);
  CHECK(after[2] == before[2]);
  CHECK(after[1] != before[1]);
  CHECK(before[2].rows() == 4);
  CHECK(before[2].cols() == 6);
  CHECK_THROWS_AS(bmtl_forward(c, s, src, {{"d0", {1, 2}}}), ValidationError);
}

TEST_CASE("one decoder of the multitask model equals a baseline with the same weights") {
  const auto c = tiny(3);
  const auto s = random_store(c, 8);
  const auto base = c.single(1);
  nn::ParameterStore<double> b;
  allocate_parameters(base, b, 0);
  for (auto& p : b) p.value = s.at(p.name).value;
  const std::vector<int> src{1, 5, 6, 2};
  const std::map<std::string, std::vector<int>> tgt{{"d0", {1, 4, 2}}, {"d1", {1, 3, 6, 2}}, {"d2", {1, 2}}};
  const auto multi = bmtl_forward(c, s, src, tgt);
  const auto single = bmtl_forward(base, b, src, {{"d1", tgt.at("d1")}});
  REQUIRE(single.size() == 1);
  CHECK(single[0] == multi[1]);
}

TEST_CASE("parameter counts") {
  ModelConfig e;
  e.embedding_dim = 4;
  e.encoder_hidden = 2;
  e.encoder_layers = 1;
  e.decoder_hidden = 3;
  e.source_vocab_size = 10;
  e.decoders = {{"x", 5}};
  CHECK(count_parameters(e).source_embedding == 40);

  for (std::size_t layers : {1, 2}) {
    auto c = tiny(3);
    c.encoder_layers = layers;
    const auto pc = count_parameters(c);
    nn::ParameterStore<float> store;
    allocate_parameters(c, store, 1);
    CHECK(pc.total == store.num_scalars());
    std::size_t enc = 0;
    for (const auto& p : store) {
      if (p.name.rfind("enc.", 0) == 0) enc += static_cast<std::size_t>(p.value.size());
    }
    CHECK(pc.encoder == enc);
    for (std::size_t k = 0; k < 3; ++k) {
      std::size_t dec = 0;
      for (const auto& p : store) {
        if (p.name.rfind("dec." + c.decoders[k].name + ".", 0) == 0) dec += static_cast<std::size_t>(p.value.size());
      }
      CHECK(pc.decoders[k].total == dec);
    }
    std::size_t baselines = 0;
    for (std::size_t k = 0; k < 3; ++k) baselines += count_parameters(c.single(k)).total;
    CHECK(baselines - pc.total == 2 * (pc.encoder + pc.source_embedding));
  }
}

TEST_CASE("config validation") {
  auto c = tiny();
  c.decoders.clear();
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = tiny();
  c.decoders[1].name = c.decoders[0].name;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = tiny();
  c.embedding_dim = 0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  CHECK(tiny().decoder_index("d1") == 1);
  CHECK_THROWS_AS(tiny().decoder_index("zz"), ValidationError);
}

TEST_CASE("model gradients pass the finite-difference check") {
  const auto c = tiny(2);
  auto s = random_store(c, 9);
  const auto src = TokenBatch::from({{1, 4, 5, 2}, {1, 7, 2}});
  const auto t0 = TokenBatch::from({{1, 3, 4, 2}, {1, 5, 2}});
  nn::LossBuilder loss = [&](nn::Graph<double>& g, const nn::ParameterStore<double>& st) {
    Seq2Seq<double> m(c, st);
    auto enc = m.encode(g, src, nullptr);
    auto att = m.attention_keys(g, 0, enc);
    auto logits = m.teacher_forced(g, 0, att, t0, nullptr);
    auto mask = t0.mask<double>();
    nn::Graph<double>::Var total{};
    for (std::size_t i = 0; i < logits.size(); ++i) {
      std::vector<double> w(t0.rows);
      for (std::size_t r = 0; r < t0.rows; ++r) w[r] = mask(Eigen::Index(r), Eigen::Index(i + 1));
      auto l = g.weighted_nll(logits[i], t0.column(i + 1), w);
      total = i == 0 ? l : g.add(total, l);
    }
    return total;
  };
  auto r = nn::check_gradients(loss, s);
  CAPTURE(r.worst_parameter);
  CHECK(r.max_relative_error < 1e-4);
  // Decoder 1 takes no part in this loss.
  CHECK(s.at("dec.d1.out.W_o").grad.isZero());
}
