#include "bmtl/graph.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "bmtl/error.hpp"

namespace bmtl::nn {

template <typename T>
auto Graph<T>::push(Matrix<T> value, bool needs_grad) -> Var {
  Node n;
  n.value = std::move(value);
  n.needs_grad = record_ && needs_grad;
  nodes_.push_back(std::move(n));
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

template <typename T>
const Matrix<T>& Graph<T>::value(Var v) const {
  const Node& n = nodes_[v.id];
  return n.ref ? *n.ref : n.value;
}

template <typename T>
Matrix<T>& Graph<T>::grad_buffer(Var v) {
  Node& n = nodes_[v.id];
  if (n.grad.size() == 0) {
    const auto& val = value(v);
    n.grad = Matrix<T>::Zero(val.rows(), val.cols());
  }
  return n.grad;
}

template <typename T>
auto Graph<T>::param(const Parameter<T>& p) -> Var {
  if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var{it->second};
  Node n;
  n.ref = &p.value;
  n.param = &p;
  n.needs_grad = record_;
  nodes_.push_back(std::move(n));
  const auto id = static_cast<std::uint32_t>(nodes_.size() - 1);
  param_nodes_.emplace(&p, id);
  return Var{id};
}

template <typename T>
auto Graph<T>::constant(Matrix<T> m) -> Var {
  return push(std::move(m), false);
}

template <typename T>
auto Graph<T>::matmul(Var a, Var b) -> Var {
  Var out = push(value(a) * value(b), needs(a) || needs(b));
  if (nodes_[out.id].needs_grad) {
    nodes_[out.id].backward = [this, a, b, out] {
      const auto& g = nodes_[out.id].grad;
      if (needs(a)) accumulate(a, g * value(b).transpose());
      if (needs(b)) accumulate(b, value(a).transpose() * g);
    };
  }
  return out;
}

template <typename T>
auto Graph<T>::add(Var a, Var b) -> Var {
  const auto& va = value(a);
  const auto& vb = value(b);
  const bool broadcast = vb.rows() == 1 && va.rows() != 1;
  if (!broadcast && (va.rows() != vb.rows() || va.cols() != vb.cols())) throw NumericError("add: shape mismatch");
  if (broadcast && va.cols() != vb.cols()) throw NumericError("add: broadcast width mismatch");
  Matrix<T> r = broadcast ? Matrix<T>(va.rowwise() + vb.row(0)) : Matrix<T>(va + vb);
  Var out = push(std::move(r), needs(a) || needs(b));
  if (nodes_[out.id].needs_grad) {
    nodes_[out.id].backward = [this, a, b, out, broadcast] {
      const auto& g = nodes_[out.id].grad;
      if (needs(a)) accumulate(a, g);
      if (needs(b)) {
        if (broadcast) {
          accumulate(b, g.colwise().sum());
        } else {
          accumulate(b, g);
        }
      }
    };
  }
  return out;
}

template <typename T>
auto Graph<T>::sub(Var a, Var b) -> Var {
  Var out = push(value(a) - value(b), needs(a) || needs(b));
  if (nodes_[out.id].needs_grad) {
    nodes_[out.id].backward = [this, a, b, out] {
      const auto& g = nodes_[out.id].grad;
      if (needs(a)) accumulate(a, g);
      if (needs(b)) accumulate(b, -(g));
    };
  }
  return out;
}

template <typename T>
auto Graph<T>::mul(Var a, Var b) -> Var {
  Var out = push(value(a).cwiseProduct(value(b)), needs(a) || needs(b));
  if (nodes_[out.id].needs_grad) {
    nodes_[out.id].backward = [this, a, b, out] {
      const auto& g = nodes_[out.id].grad;
      if (needs(a)) accumulate(a, g.cwiseProduct(value(b)));
      if (needs(b)) accumulate(b, g.cwiseProduct(value(a)));
    };
  }
  return out;
}

template <typename T>
auto Graph<T>::scale(Var a, T factor) -> Var {
  Var out = push(value(a) * factor, needs(a));
  if (nodes_[out.id].needs_grad) {
    nodes_[out.id].backward = [this, a, out, factor] { accumulate(a, nodes_[out.id].grad * factor); };
  }
  return out;
}

template <typename T>
auto Graph<T>::sigmoid(Var a) -> Var {
  Matrix<T> y = value(a).unaryExpr([](T x) { return T(1) / (T(1) + std::exp(-x)); });
  Var out = push(std::move(y), needs(a));
  if (nodes_[out.id].needs_grad) {
    nodes_[out.id].backward = [this, a, out] {
      const auto& y = nodes_[out.id].value;
      accumulate(a, nodes_[out.id].grad.cwiseProduct(y.cwiseProduct((T(1) - y.array()).matrix())));
    };
  }
  return out;
}

template <typename T>
auto Graph<T>::tanh(Var a) -> Var {
  Var out = push(value(a).array().tanh().matrix(), needs(a));
  if (nodes_[out.id].needs_grad) {
    nodes_[out.id].backward = [this, a, out] {
      const auto& y = nodes_[out.id].value;
      accumulate(a, nodes_[out.id].grad.cwiseProduct((T(1) - y.array().square()).matrix()));
    };
  }
  return out;
}

template <typename T>
auto Graph<T>::slice_cols(Var a, Eigen::Index start, Eigen::Index count) -> Var {
  Var out = push(value(a).middleCols(start, count), needs(a));
  if (nodes_[out.id].needs_grad) {
    nodes_[out.id].backward = [this, a, out, start, count] {
      grad_buffer(a).middleCols(start, count) += nodes_[out.id].grad;
    };
  }
  return out;
}

template <typename T>
auto Graph<T>::concat_cols(Var a, Var b) -> Var {
  const auto& va = value(a);
  const auto& vb = value(b);
  if (va.rows() != vb.rows()) throw NumericError("concat_cols: row mismatch");
  Matrix<T> r(va.rows(), va.cols() + vb.cols());
  r << va, vb;
  Var out = push(std::move(r), needs(a) || needs(b));
  if (nodes_[out.id].needs_grad) {
    const auto ca = va.cols(), cb = vb.cols();
    nodes_[out.id].backward = [this, a, b, out, ca, cb] {
      const auto& g = nodes_[out.id].grad;
      if (needs(a)) accumulate(a, g.leftCols(ca));
      if (needs(b)) accumulate(b, g.rightCols(cb));
    };
  }
  return out;
}

template <typename T>
auto Graph<T>::lookup(Var table, std::span<const int> ids) -> Var {
  const auto& tv = value(table);
  Matrix<T> r(static_cast<Eigen::Index>(ids.size()), tv.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= tv.rows()) {
      throw ValidationError("token id " + std::to_string(ids[i]) + " outside embedding table of " +
                            std::to_string(tv.rows()) + " rows");
    }
    r.row(static_cast<Eigen::Index>(i)) = tv.row(ids[i]);
  }
  Var out = push(std::move(r), needs(table));
  if (nodes_[out.id].needs_grad) {
    std::vector<int> idv(ids.begin(), ids.end());
    nodes_[out.id].backward = [this, table, out, idv = std::move(idv)] {
      auto& gt = grad_buffer(table);
      const auto& g = nodes_[out.id].grad;
      for (std::size_t i = 0; i < idv.size(); ++i) gt.row(idv[i]) += g.row(static_cast<Eigen::Index>(i));
    };
  }
  return out;
}

template <typename T>
auto Graph<T>::mul_const(Var a, const Matrix<T>& m) -> Var {
  Var out = push(value(a).cwiseProduct(m), needs(a));
  if (nodes_[out.id].needs_grad) {
    nodes_[out.id].backward = [this, a, out, m] { accumulate(a, nodes_[out.id].grad.cwiseProduct(m)); };
  }
  return out;
}

template <typename T>
auto Graph<T>::blend_rows(std::span<const T> keep, Var fresh, Var held) -> Var {
  const auto& vf = value(fresh);
  const auto& vh = value(held);
  Matrix<T> r(vf.rows(), vf.cols());
  for (Eigen::Index b = 0; b < vf.rows(); ++b) {
    r.row(b) = keep[static_cast<std::size_t>(b)] != T(0) ? vf.row(b) : vh.row(b);
  }
  Var out = push(std::move(r), needs(fresh) || needs(held));
  if (nodes_[out.id].needs_grad) {
    std::vector<T> k(keep.begin(), keep.end());
    nodes_[out.id].backward = [this, fresh, held, out, k = std::move(k)] {
      const auto& g = nodes_[out.id].grad;
      for (Eigen::Index b = 0; b < g.rows(); ++b) {
        const bool take = k[static_cast<std::size_t>(b)] != T(0);
        if (take && needs(fresh)) grad_buffer(fresh).row(b) += g.row(b);
        if (!take && needs(held)) grad_buffer(held).row(b) += g.row(b);
      }
    };
  }
  return out;
}

template <typename T>
auto Graph<T>::masked_mean(std::span<const Var> values, const Matrix<T>& mask) -> Var {
  const auto rows = value(values[0]).rows();
  const auto cols = value(values[0]).cols();
  Matrix<T> r = Matrix<T>::Zero(rows, cols);
  std::vector<T> inv(static_cast<std::size_t>(rows));
  for (Eigen::Index b = 0; b < rows; ++b) {
    const T n = mask.row(b).sum();
    if (n <= T(0)) throw NumericError("masked_mean: row " + std::to_string(b) + " fully masked");
    inv[static_cast<std::size_t>(b)] = T(1) / n;
  }
  bool any = false;
  for (std::size_t j = 0; j < values.size(); ++j) {
    const auto& vj = value(values[j]);
    for (Eigen::Index b = 0; b < rows; ++b) {
      const T w = mask(b, static_cast<Eigen::Index>(j));
      if (w != T(0)) r.row(b) += (w * inv[static_cast<std::size_t>(b)]) * vj.row(b);
    }
    any = any || needs(values[j]);
  }
  Var out = push(std::move(r), any);
  if (nodes_[out.id].needs_grad) {
    std::vector<Var> vals(values.begin(), values.end());
    nodes_[out.id].backward = [this, out, vals = std::move(vals), mask, inv = std::move(inv)] {
      const auto& g = nodes_[out.id].grad;
      for (std::size_t j = 0; j < vals.size(); ++j) {
        if (!needs(vals[j])) continue;
        auto& gj = grad_buffer(vals[j]);
        for (Eigen::Index b = 0; b < g.rows(); ++b) {
          const T w = mask(b, static_cast<Eigen::Index>(j));
          if (w != T(0)) gj.row(b) += (w * inv[static_cast<std::size_t>(b)]) * g.row(b);
        }
      }
    };
  }
  return out;
}

template <typename T>
auto Graph<T>::mlp_attention(Var query, std::span<const Var> keys, std::span<const Var> values, Var v,
                             const Matrix<T>& mask, Matrix<T>* alpha_out) -> Var {
  const auto& q = value(query);
  const auto& vv = value(v);
  const Eigen::Index rows = q.rows();
  const auto positions = static_cast<Eigen::Index>(keys.size());
  if (positions == 0 || static_cast<Eigen::Index>(values.size()) != positions) {
    throw NumericError("mlp_attention: keys/values mismatch");
  }
  const Eigen::Index width = value(values[0]).cols();

  std::vector<Matrix<T>> hidden(keys.size());
  Matrix<T> scores(rows, positions);
  for (Eigen::Index j = 0; j < positions; ++j) {
    hidden[static_cast<std::size_t>(j)] = (q + value(keys[static_cast<std::size_t>(j)])).array().tanh().matrix();
    scores.col(j) = hidden[static_cast<std::size_t>(j)] * vv;
  }
  Matrix<T> alpha = Matrix<T>::Zero(rows, positions);
  for (Eigen::Index b = 0; b < rows; ++b) {
    T best = -std::numeric_limits<T>::infinity();
    for (Eigen::Index j = 0; j < positions; ++j) {
      if (mask(b, j) != T(0)) best = std::max(best, scores(b, j));
    }
    if (best == -std::numeric_limits<T>::infinity()) {
      throw NumericError("attention: every source position is masked in row " + std::to_string(b));
    }
    T total = 0;
    for (Eigen::Index j = 0; j < positions; ++j) {
      if (mask(b, j) != T(0)) {
        alpha(b, j) = std::exp(scores(b, j) - best);
        total += alpha(b, j);
      }
    }
    alpha.row(b) /= total;
  }
  Matrix<T> context = Matrix<T>::Zero(rows, width);
  for (Eigen::Index j = 0; j < positions; ++j) {
    context += alpha.col(j).asDiagonal() * value(values[static_cast<std::size_t>(j)]);
  }
  if (alpha_out) *alpha_out = alpha;

  bool any = needs(query) || needs(v);
  for (std::size_t j = 0; j < keys.size(); ++j) any = any || needs(keys[j]) || needs(values[j]);
  Var out = push(std::move(context), any);
  if (nodes_[out.id].needs_grad) {
    std::vector<Var> ks(keys.begin(), keys.end());
    std::vector<Var> vs(values.begin(), values.end());
    nodes_[out.id].backward = [this, out, query, v, ks = std::move(ks), vs = std::move(vs),
                               hidden = std::move(hidden), alpha = std::move(alpha)] {
      const auto& g = nodes_[out.id].grad;
      const Eigen::Index rows = g.rows();
      const auto positions = static_cast<Eigen::Index>(ks.size());
      Matrix<T> dalpha(rows, positions);
      for (Eigen::Index j = 0; j < positions; ++j) {
        const auto& vj = value(vs[static_cast<std::size_t>(j)]);
        dalpha.col(j) = g.cwiseProduct(vj).rowwise().sum();
        if (needs(vs[static_cast<std::size_t>(j)])) {
          accumulate(vs[static_cast<std::size_t>(j)], alpha.col(j).asDiagonal() * g);
        }
      }
      const Matrix<T> inner = alpha.cwiseProduct(dalpha).rowwise().sum();
      Matrix<T> dscores = alpha.cwiseProduct(dalpha - inner.replicate(1, positions));
      const auto& vv = value(v);
      for (Eigen::Index j = 0; j < positions; ++j) {
        const auto& h = hidden[static_cast<std::size_t>(j)];
        if (needs(v)) accumulate(v, h.transpose() * dscores.col(j));
        Matrix<T> dpre = (dscores.col(j) * vv.transpose()).cwiseProduct((T(1) - h.array().square()).matrix());
        if (needs(query)) accumulate(query, dpre);
        if (needs(ks[static_cast<std::size_t>(j)])) accumulate(ks[static_cast<std::size_t>(j)], dpre);
      }
    };
  }
  return out;
}

template <typename T>
auto Graph<T>::weighted_nll(Var logits, std::span<const int> targets, std::span<const T> weights) -> Var {
  const auto& l = value(logits);
  if (static_cast<Eigen::Index>(targets.size()) != l.rows() || weights.size() != targets.size()) {
    throw NumericError("weighted_nll: batch size mismatch");
  }
  Matrix<T> probs(l.rows(), l.cols());
  T total = 0;
  for (Eigen::Index b = 0; b < l.rows(); ++b) {
    const int t = targets[static_cast<std::size_t>(b)];
    const T w = weights[static_cast<std::size_t>(b)];
    if (w == T(0)) {
      probs.row(b).setZero();
      continue;
    }
    if (t < 0 || t >= l.cols()) throw ValidationError("target id " + std::to_string(t) + " out of range");
    const T m = l.row(b).maxCoeff();
    probs.row(b) = (l.row(b).array() - m).exp().matrix();
    const T z = probs.row(b).sum();
    probs.row(b) /= z;
    total += w * (m + std::log(z) - l(b, t));
  }
  Var out = push(Matrix<T>::Constant(1, 1, total), needs(logits));
  if (nodes_[out.id].needs_grad) {
    std::vector<int> tv(targets.begin(), targets.end());
    std::vector<T> wv(weights.begin(), weights.end());
    nodes_[out.id].backward = [this, logits, out, probs = std::move(probs), tv = std::move(tv), wv = std::move(wv)] {
      const T g = nodes_[out.id].grad(0, 0);
      auto& gl = grad_buffer(logits);
      for (Eigen::Index b = 0; b < gl.rows(); ++b) {
        const T w = wv[static_cast<std::size_t>(b)];
        if (w == T(0)) continue;
        gl.row(b) += (g * w) * probs.row(b);
        gl(b, tv[static_cast<std::size_t>(b)]) -= g * w;
      }
    };
  }
  return out;
}

template <typename T>
void Graph<T>::backward(Var target) {
  if (!record_) throw NumericError("backward() on a non-recording graph");
  if (value(target).size() != 1) throw NumericError("backward() target must be 1x1");
  for (auto& n : nodes_) n.grad.resize(0, 0);
  grad_buffer(target)(0, 0) = T(1);
  for (std::int64_t i = target.id; i >= 0; --i) {
    auto& n = nodes_[static_cast<std::size_t>(i)];
    if (n.backward && n.grad.size() != 0) n.backward();
  }
}

template <typename T>
void Graph<T>::accumulate_into(ParameterStore<T>& store) const {
  for (const auto& [param, id] : param_nodes_) {
    const auto& g = nodes_[id].grad;
    if (g.size() == 0) continue;
    const auto idx = store.index_of(param);
    if (idx == ParameterStore<T>::npos) throw ValidationError("gradient for a parameter outside this store");
    store[idx].grad += g;
  }
}

template class Graph<float>;
template class Graph<double>;

}  // namespace bmtl::nn
