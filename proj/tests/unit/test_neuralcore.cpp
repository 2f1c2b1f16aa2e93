#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <random>

#include "bmtl/error.hpp"
#include "bmtl/graph.hpp"
#include "bmtl/optim.hpp"
#include "bmtl/tensor.hpp"
#include "bmtl/util.hpp"

using namespace bmtl;
using namespace bmtl::nn;

namespace {

void fill(ParameterStore<double>& store, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (auto& p : store) {
    for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = 2 * uniform01(rng) - 1;
  }
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("bmtl_unit_" + name)).string();
}

}  // namespace

TEST_CASE("softmax") {
  const std::vector<double> zero{0, 0};
  auto p = softmax<double>(zero);
  CHECK(p[0] == doctest::Approx(0.5));
  CHECK(p[1] == doctest::Approx(0.5));

  const std::vector<double> five{5, 5, 5};
  const bool mask[] = {true, false, true};
  auto q = softmax<double>(five, mask);
  CHECK(q[0] == doctest::Approx(0.5));
  CHECK(q[1] == 0.0);
  CHECK(q[2] == doctest::Approx(0.5));

  const std::vector<double> s{1, 2, 3};
  const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  auto r = softmax<double>(s);
  for (int i = 0; i < 3; ++i) CHECK(r[i] == doctest::Approx(std::exp(i + 1.0) / z));

  const std::vector<double> big{1000, 1000};
  CHECK(softmax<double>(big)[0] == doctest::Approx(0.5));

  const bool none[] = {false, false};
  CHECK_THROWS_AS(softmax<double>(zero, none), NumericError);
}

TEST_CASE("cross_entropy") {
  const std::vector<double> zero{0, 0};
  CHECK(cross_entropy<double>(zero, 0).loss == doctest::Approx(std::log(2.0)));
  const std::vector<double> sure{10, -10};
  CHECK(cross_entropy<double>(sure, 0).loss == doctest::Approx(0.0).epsilon(1e-8));

  std::mt19937_64 rng(4);
  std::vector<double> logits(6);
  for (auto& x : logits) x = 4 * uniform01(rng) - 2;
  auto ce = cross_entropy<double>(logits, 3);
  for (std::size_t i = 0; i < logits.size(); ++i) {
    auto up = logits, down = logits;
    up[i] += 1e-6;
    down[i] -= 1e-6;
    const double fd = (cross_entropy<double>(up, 3).loss - cross_entropy<double>(down, 3).loss) / 2e-6;
    CHECK(ce.grad[i] == doctest::Approx(fd).epsilon(1e-6));
  }
}

TEST_CASE("clip_global_norm") {
  Matrix<double> g(1, 2);
  g << 3, 4;
  Matrix<double>* gs[] = {&g};
  CHECK(clip_global_norm<double>(gs, 1.0) == doctest::Approx(5.0));
  CHECK(g(0, 0) == doctest::Approx(0.6));
  CHECK(g(0, 1) == doctest::Approx(0.8));

  Matrix<double> small(1, 1);
  small << 0.5;
  Matrix<double>* ss[] = {&small};
  clip_global_norm<double>(ss, 1.0);
  CHECK(small(0, 0) == 0.5);

  Matrix<double> zero = Matrix<double>::Zero(2, 2);
  Matrix<double>* zs[] = {&zero};
  CHECK(clip_global_norm<double>(zs, 1.0) == 0.0);
  CHECK(zero.isZero());

  // Direction is preserved across several tensors.
  std::mt19937_64 rng(1);
  Matrix<double> a(2, 3), b(1, 4);
  for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = 10 * uniform01(rng) - 5;
  for (Eigen::Index i = 0; i < b.size(); ++i) b.data()[i] = 10 * uniform01(rng) - 5;
  const Matrix<double> a0 = a, b0 = b;
  Matrix<double>* ab[] = {&a, &b};
  const double norm = clip_global_norm<double>(ab, 1.0);
  CHECK(std::sqrt(a.squaredNorm() + b.squaredNorm()) <= 1.0 + 1e-9);
  CHECK((a - a0 / norm).norm() < 1e-12);
  CHECK((b - b0 / norm).norm() < 1e-12);
}

TEST_CASE("adam single step") {
  ParameterStore<double> s;
  auto& p = s.add("theta", 1, 1);
  p.value(0, 0) = 1.0;
  p.grad(0, 0) = 1.0;
  auto st = AdamState<double>::zeros_like(s, {1e-4, 0.9, 0.999, 1e-8});
  adam_step(s, st);
  // m_hat = v_hat = 1, so the step is lr / (1 + eps).
  CHECK(s.at("theta").value(0, 0) == doctest::Approx(1.0 - 1e-4 / (1.0 + 1e-8)).epsilon(1e-12));
  CHECK(st.step == 1);
}

TEST_CASE("adam leaves zero-gradient parameters alone and is symmetric") {
  ParameterStore<double> s;
  s.add("a", 1, 1);
  s.add("b", 1, 1);
  s.add("c", 1, 1);
  auto& a = s.at("a");
  auto& b = s.at("b");
  auto& c = s.at("c");
  a.value(0, 0) = b.value(0, 0) = 0.3;
  a.grad(0, 0) = b.grad(0, 0) = -0.7;
  c.value(0, 0) = 2.0;
  c.grad(0, 0) = 0.0;
  auto st = AdamState<double>::zeros_like(s, {});
  for (int i = 0; i < 3; ++i) adam_step(s, st);
  CHECK(s.at("a").value(0, 0) == s.at("b").value(0, 0));
  CHECK(s.at("c").value(0, 0) == 2.0);
}

TEST_CASE("linear layer with cross entropy passes the gradient check") {
  ParameterStore<double> s;
  s.add("W", 4, 5);
  s.add("b", 1, 5);
  fill(s, 11);
  Matrix<double> x(3, 4);
  std::mt19937_64 rng(2);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = uniform01(rng);
  const std::vector<int> targets{0, 4, 2};
  const std::vector<double> weights{1, 1, 1};
  LossBuilder loss = [&](Graph<double>& g, const ParameterStore<double>& st) {
    auto h = g.matmul(g.constant(x), g.param(st.at("W")));
    auto ones = g.constant(Matrix<double>::Ones(3, 1));
    return g.weighted_nll(g.add(h, g.matmul(ones, g.param(st.at("b")))), targets, weights);
  };
  auto r = check_gradients(loss, s);
  CHECK(r.max_relative_error < 1e-6);
  CHECK(r.entries_checked == 25);
}

TEST_CASE("every graph operation passes the gradient check") {
  ParameterStore<double> s;
  s.add("E", 6, 3);
  s.add("A", 3, 4);
  s.add("B", 2, 4);
  s.add("C", 4, 4);
  s.add("v", 4, 1);
  s.add("O", 7, 5);
  fill(s, 5);
  const std::vector<int> ids{1, 4};
  Matrix<double> fixed(2, 4);
  fixed << 0.5, -1, 2, 0.25, 1, 0, -0.5, 3;
  Matrix<double> mask(2, 3);
  mask << 1, 1, 1, 1, 1, 0;
  const std::vector<double> keep{1, 0};
  const std::vector<int> targets{3, 0};
  const std::vector<double> weights{0.7, 1.3};

  LossBuilder loss = [&](Graph<double>& g, const ParameterStore<double>& st) {
    auto e = g.lookup(g.param(st.at("E")), ids);  // 2 x 3
    auto a = g.matmul(e, g.param(st.at("A")));     // 2 x 4
    auto b = g.param(st.at("B"));
    auto t = g.tanh(g.add(a, b));
    auto sg = g.sigmoid(g.sub(a, g.scale(b, 0.5)));
    auto m = g.mul(t, sg);
    auto mc = g.mul_const(m, fixed);
    auto blended = g.blend_rows(keep, mc, t);
    std::vector<Graph<double>::Var> seq{blended, m, g.tanh(a)};
    auto mean = g.masked_mean(seq, mask);  // 2 x 4
    std::vector<Graph<double>::Var> keys, values;
    for (const auto& x : seq) {
      keys.push_back(g.matmul(x, g.param(st.at("C"))));
      values.push_back(x);
    }
    auto ctx = g.mlp_attention(g.matmul(mean, g.param(st.at("C"))), keys, values, g.param(st.at("v")), mask);
    auto wide = g.concat_cols(ctx, g.slice_cols(mean, 1, 3));  // 2 x 7
    auto logits = g.matmul(wide, g.param(st.at("O")));
    return g.weighted_nll(logits, targets, weights);
  };
  auto r = check_gradients(loss, s);
  CAPTURE(r.worst_parameter);
  CHECK(r.max_relative_error < 1e-6);
}

TEST_CASE("a corrupted gradient is caught") {
  ParameterStore<double> s;
  s.add("W", 3, 3);
  fill(s, 8);
  const std::vector<int> targets{1};
  const std::vector<double> weights{1};
  LossBuilder loss = [&](Graph<double>& g, const ParameterStore<double>& st) {
    auto x = g.constant(Matrix<double>::Ones(1, 3));
    return g.weighted_nll(g.tanh(g.matmul(x, g.param(st.at("W")))), targets, weights);
  };
  analytic_gradients(loss, s);
  s.at("W").grad(1, 2) += 0.05;
  auto r = compare_gradients(loss, s);
  CHECK(r.max_relative_error > 1e-4);
  CHECK(r.worst_parameter == "W");
  CHECK(r.worst_index == 5);
}

TEST_CASE("non-recording graphs skip gradients") {
  ParameterStore<double> s;
  s.add("W", 2, 2).value.setOnes();
  Graph<double> g(false);
  auto y = g.matmul(g.param(s.at("W")), g.param(s.at("W")));
  CHECK(g.value(y)(0, 0) == 2.0);
}

TEST_CASE("archive roundtrip and truncation") {
  ParameterStore<float> s;
  s.add("a", 2, 3).value << 1, 2, 3, 4, 5, 6;
  s.add("b", 1, 1).value << -0.5f;
  Archive ar;
  ar.set_meta("kind", "test");
  save_parameters(s, ar);
  const auto path = temp_path("archive.bin");
  ar.save(path);

  auto back = Archive::load(path);
  CHECK(*back.meta("kind") == "test");
  ParameterStore<float> t;
  t.add("a", 2, 3);
  t.add("b", 1, 1);
  load_parameters(t, back);
  CHECK(t.at("a").value == s.at("a").value);
  CHECK(t.at("b").value == s.at("b").value);

  auto bytes = read_file(path);
  write_file(path, bytes.substr(0, bytes.size() - 3));
  CHECK_THROWS_AS(Archive::load(path), TruncatedFileError);
  std::filesystem::remove(path);

  CHECK_THROWS_AS(ar.set_meta("x", "a\tb"), ValidationError);
}

TEST_CASE("parameter store casts between precisions") {
  ParameterStore<float> s;
  s.add("w", 1, 2).value << 0.25f, -1.5f;
  auto d = s.cast<double>();
  CHECK(d.at("w").value(0, 1) == -1.5);
  CHECK(s.num_scalars() == 2);
  CHECK_THROWS(s.at("missing"));
}
