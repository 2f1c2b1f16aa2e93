#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "bmtl/graph.hpp"
#include "bmtl/tensor.hpp"

namespace bmtl::nn {

// Masked, max-shifted softmax. Masked entries (mask[i] == false) are exactly
// zero. Throws NumericError when every entry is masked. An empty mask means
// all entries are active.
template <typename T>
std::vector<T> softmax(std::span<const T> scores, std::span<const bool> mask = {});

template <typename T>
struct CrossEntropy {
  T loss;
  std::vector<T> grad;  // softmax - one_hot(target)
};

template <typename T>
CrossEntropy<T> cross_entropy(std::span<const T> logits, std::size_t target);

// Scales every gradient by threshold / norm when the global L2 norm exceeds
// the threshold. Returns the norm before clipping.
template <typename T>
T clip_global_norm(std::span<Matrix<T>* const> gradients, T threshold);
template <typename T>
T clip_global_norm(ParameterStore<T>& store, T threshold);

template <typename T>
T global_grad_norm(const ParameterStore<T>& store);

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

template <typename T>
struct AdamState {
  AdamConfig config;
  std::vector<Matrix<T>> first_moment;
  std::vector<Matrix<T>> second_moment;
  std::uint64_t step = 0;

  static AdamState zeros_like(const ParameterStore<T>& store, AdamConfig config);
};

// Bias-corrected Adam applied in place; increments state.step.
template <typename T>
void adam_step(ParameterStore<T>& store, AdamState<T>& state);

template <typename T>
void save_adam(const AdamState<T>& state, const ParameterStore<T>& store, Archive& archive);
template <typename T>
AdamState<T> load_adam(const ParameterStore<T>& store, const Archive& archive, AdamConfig config);

// Finite-difference gradient verification.
struct GradientReport {
  double max_relative_error = 0.0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
  std::size_t entries_checked = 0;
};

// Builds the scalar loss on the given graph.
using LossBuilder = std::function<Graph<double>::Var(Graph<double>&, const ParameterStore<double>&)>;

// Fills store gradients with d(loss)/d(param) via back-propagation.
void analytic_gradients(const LossBuilder& loss, ParameterStore<double>& store);

// Compares the gradients currently held in `store` against central
// differences (step `h`) on every parameter entry. Relative error per entry
// is |a - n| / max(|a|, |n|, 1e-8). Throws NumericError naming the parameter
// on non-finite values.
GradientReport compare_gradients(const LossBuilder& loss, ParameterStore<double>& store, double h = 1e-5);

GradientReport check_gradients(const LossBuilder& loss, ParameterStore<double>& store, double h = 1e-5);

}  // namespace bmtl::nn
