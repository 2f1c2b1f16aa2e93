#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <unordered_map>
#include <vector>

#include "bmtl/tensor.hpp"

namespace bmtl::nn {

// Reverse-mode tape over row-major matrices. Activations are batch-major
// (one row per sequence). A non-recording graph only evaluates values.
template <typename T>
class Graph {
 public:
  struct Var {
    std::uint32_t id = 0;
  };

  explicit Graph(bool record = true) : record_(record) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool recording() const { return record_; }
  std::size_t size() const { return nodes_.size(); }

  Var param(const Parameter<T>& p);
  Var constant(Matrix<T> m);

  const Matrix<T>& value(Var v) const;
  // Gradient of the last backward() target w.r.t. v (empty if unreached).
  const Matrix<T>& grad(Var v) const { return nodes_[v.id].grad; }

  Var matmul(Var a, Var b);
  // a + b, where b may also be a single row broadcast over a's rows.
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, T factor);
  Var sigmoid(Var a);
  Var tanh(Var a);
  Var slice_cols(Var a, Eigen::Index start, Eigen::Index count);
  Var concat_cols(Var a, Var b);
  // Rows of `table` selected by ids.
  Var lookup(Var table, std::span<const int> ids);
  // Elementwise product with a constant (dropout masks).
  Var mul_const(Var a, const Matrix<T>& m);
  // Row b is taken from `fresh` when keep[b] != 0, else from `held`.
  Var blend_rows(std::span<const T> keep, Var fresh, Var held);
  // Mean over positions j of values[j], weighted by mask(b, j).
  Var masked_mean(std::span<const Var> values, const Matrix<T>& mask);
  // MLP attention: score(b,j) = v . tanh(query(b) + keys[j](b)), masked
  // softmax over j, returns sum_j alpha(b,j) values[j](b). The weights are
  // written to *alpha when given.
  Var mlp_attention(Var query, std::span<const Var> keys, std::span<const Var> values, Var v,
                    const Matrix<T>& mask, Matrix<T>* alpha = nullptr);
  // sum_b weights[b] * -log softmax(logits(b))[targets[b]], as a 1x1 value.
  Var weighted_nll(Var logits, std::span<const int> targets, std::span<const T> weights);

  // Seeds d(target)/d(target) = 1 for a 1x1 target and back-propagates.
  void backward(Var target);
  // Adds leaf-parameter gradients into the store that owns them.
  void accumulate_into(ParameterStore<T>& store) const;

 private:
  struct Node {
    Matrix<T> value;
    Matrix<T> grad;
    const Matrix<T>* ref = nullptr;
    const Parameter<T>* param = nullptr;
    bool needs_grad = false;
    std::function<void()> backward;
  };

  Var push(Matrix<T> value, bool needs_grad);
  bool needs(Var v) const { return record_ && nodes_[v.id].needs_grad; }
  Matrix<T>& grad_buffer(Var v);
  // First contribution assigns, later ones add; avoids zero-filling.
  template <typename Expr>
  void accumulate(Var v, const Expr& e) {
    Matrix<T>& g = nodes_[v.id].grad;
    if (g.size() == 0) {
      g.noalias() = e;
    } else {
      g.noalias() += e;
    }
  }

  bool record_;
  std::vector<Node> nodes_;
  std::unordered_map<const Parameter<T>*, std::uint32_t> param_nodes_;
};

}  // namespace bmtl::nn
