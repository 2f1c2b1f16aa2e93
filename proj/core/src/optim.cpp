#include "bmtl/optim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "bmtl/error.hpp"

namespace bmtl::nn {

template <typename T>
std::vector<T> softmax(std::span<const T> scores, std::span<const bool> mask) {
  if (!mask.empty() && mask.size() != scores.size()) throw NumericError("softmax: mask length mismatch");
  auto active = [&](std::size_t i) { return mask.empty() || mask[i]; };
  T best = -std::numeric_limits<T>::infinity();
  bool any = false;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (active(i)) {
      best = any ? std::max(best, scores[i]) : scores[i];
      any = true;
    }
  }
  if (!any) throw NumericError("softmax: every entry is masked");
  std::vector<T> out(scores.size(), T(0));
  T total = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (active(i)) {
      out[i] = std::exp(scores[i] - best);
      total += out[i];
    }
  }
  for (auto& p : out) p /= total;
  return out;
}

template <typename T>
CrossEntropy<T> cross_entropy(std::span<const T> logits, std::size_t target) {
  if (target >= logits.size()) {
    throw ValidationError("cross_entropy: target " + std::to_string(target) + " outside " +
                          std::to_string(logits.size()) + " classes");
  }
  CrossEntropy<T> r;
  r.grad = softmax<T>(logits);
  // log-sum-exp keeps precision for tiny target probabilities
  const T m = *std::max_element(logits.begin(), logits.end());
  T z = 0;
  for (T l : logits) z += std::exp(l - m);
  r.loss = m + std::log(z) - logits[target];
  r.grad[target] -= T(1);
  return r;
}

template <typename T>
T clip_global_norm(std::span<Matrix<T>* const> gradients, T threshold) {
  if (!(threshold > T(0))) throw ValidationError("clip_global_norm: threshold must be positive");
  double sq = 0;
  for (const auto* g : gradients) sq += static_cast<double>(g->squaredNorm());
  const T norm = static_cast<T>(std::sqrt(sq));
  if (norm > threshold) {
    const T factor = threshold / norm;
    for (auto* g : gradients) *g *= factor;
  }
  return norm;
}

template <typename T>
T clip_global_norm(ParameterStore<T>& store, T threshold) {
  std::vector<Matrix<T>*> grads;
  for (auto& p : store) grads.push_back(&p.grad);
  return clip_global_norm<T>(std::span<Matrix<T>* const>(grads), threshold);
}

template <typename T>
T global_grad_norm(const ParameterStore<T>& store) {
  double sq = 0;
  for (const auto& p : store) sq += static_cast<double>(p.grad.squaredNorm());
  return static_cast<T>(std::sqrt(sq));
}

template <typename T>
AdamState<T> AdamState<T>::zeros_like(const ParameterStore<T>& store, AdamConfig config) {
  AdamState s;
  s.config = config;
  for (const auto& p : store) {
    s.first_moment.push_back(Matrix<T>::Zero(p.value.rows(), p.value.cols()));
    s.second_moment.push_back(Matrix<T>::Zero(p.value.rows(), p.value.cols()));
  }
  return s;
}

template <typename T>
void adam_step(ParameterStore<T>& store, AdamState<T>& state) {
  if (state.first_moment.size() != store.size() || state.second_moment.size() != store.size()) {
    throw ValidationError("adam_step: optimizer state covers " + std::to_string(state.first_moment.size()) +
                          " parameters, store has " + std::to_string(store.size()));
  }
  const auto& c = state.config;
  ++state.step;
  const T b1 = static_cast<T>(c.beta1), b2 = static_cast<T>(c.beta2);
  const T correction1 = static_cast<T>(1.0 - std::pow(c.beta1, static_cast<double>(state.step)));
  const T correction2 = static_cast<T>(1.0 - std::pow(c.beta2, static_cast<double>(state.step)));
  const T lr = static_cast<T>(c.learning_rate), eps = static_cast<T>(c.epsilon);
  for (std::size_t i = 0; i < store.size(); ++i) {
    auto& p = store[i];
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    if (m.rows() != p.value.rows() || m.cols() != p.value.cols() || v.rows() != m.rows() || v.cols() != m.cols()) {
      throw ValidationError("adam_step: state shape mismatch for '" + p.name + "'");
    }
    m = b1 * m + (T(1) - b1) * p.grad;
    v = b2 * v + (T(1) - b2) * p.grad.cwiseProduct(p.grad);
    p.value.array() -= lr * (m.array() / correction1) / ((v.array() / correction2).sqrt() + eps);
  }
}

template <typename T>
void save_adam(const AdamState<T>& state, const ParameterStore<T>& store, Archive& archive) {
  archive.set_meta("adam.step", std::to_string(state.step));
  for (std::size_t i = 0; i < store.size(); ++i) {
    archive.put<T>("adam_m/" + store[i].name, state.first_moment[i]);
    archive.put<T>("adam_v/" + store[i].name, state.second_moment[i]);
  }
}

template <typename T>
AdamState<T> load_adam(const ParameterStore<T>& store, const Archive& archive, AdamConfig config) {
  AdamState<T> s;
  s.config = config;
  s.step = std::stoull(archive.require_meta("adam.step"));
  for (const auto& p : store) {
    s.first_moment.push_back(archive.get<T>("adam_m/" + p.name));
    s.second_moment.push_back(archive.get<T>("adam_v/" + p.name));
  }
  return s;
}

void analytic_gradients(const LossBuilder& loss, ParameterStore<double>& store) {
  store.zero_grad();
  Graph<double> g(true);
  auto out = loss(g, store);
  g.backward(out);
  g.accumulate_into(store);
}

namespace {
double evaluate(const LossBuilder& loss, const ParameterStore<double>& store) {
  Graph<double> g(false);
  return g.value(loss(g, store))(0, 0);
}
}  // namespace

GradientReport compare_gradients(const LossBuilder& loss, ParameterStore<double>& store, double h) {
  GradientReport report;
  for (auto& p : store) {
    for (Eigen::Index k = 0; k < p.value.size(); ++k) {
      double& x = p.value.data()[k];
      const double saved = x;
      x = saved + h;
      const double up = evaluate(loss, store);
      x = saved - h;
      const double down = evaluate(loss, store);
      x = saved;
      const double numeric = (up - down) / (2 * h);
      const double analytic = p.grad.data()[k];
      if (!std::isfinite(numeric) || !std::isfinite(analytic)) {
        throw NumericError("non-finite gradient for parameter '" + p.name + "' entry " + std::to_string(k));
      }
      const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
      const double rel = std::abs(analytic - numeric) / denom;
      ++report.entries_checked;
      if (rel > report.max_relative_error || report.worst_parameter.empty()) {
        report.max_relative_error = rel;
        report.worst_parameter = p.name;
        report.worst_index = static_cast<std::size_t>(k);
        report.analytic_at_worst = analytic;
        report.numeric_at_worst = numeric;
      }
    }
  }
  return report;
}

GradientReport check_gradients(const LossBuilder& loss, ParameterStore<double>& store, double h) {
  analytic_gradients(loss, store);
  return compare_gradients(loss, store, h);
}

#define BMTL_INSTANTIATE(T)                                                                    \
  template std::vector<T> softmax<T>(std::span<const T>, std::span<const bool>);                \
  template CrossEntropy<T> cross_entropy<T>(std::span<const T>, std::size_t);                    \
  template T clip_global_norm<T>(std::span<Matrix<T>* const>, T);                                \
  template T clip_global_norm<T>(ParameterStore<T>&, T);                                         \
  template T global_grad_norm<T>(const ParameterStore<T>&);                                      \
  template struct AdamState<T>;                                                                  \
  template void adam_step<T>(ParameterStore<T>&, AdamState<T>&);                                 \
  template void save_adam<T>(const AdamState<T>&, const ParameterStore<T>&, Archive&);           \
  template AdamState<T> load_adam<T>(const ParameterStore<T>&, const Archive&, AdamConfig);

BMTL_INSTANTIATE(float)
BMTL_INSTANTIATE(double)
#undef BMTL_INSTANTIATE

}  // namespace bmtl::nn
