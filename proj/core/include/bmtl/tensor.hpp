#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace bmtl::nn {

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class Dtype { f32, f64 };

template <typename T>
constexpr Dtype dtype_of() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? Dtype::f32 : Dtype::f64;
}

std::string_view dtype_name(Dtype d);
Dtype parse_dtype(std::string_view name);

template <typename T>
struct Parameter {
  std::string name;
  Matrix<T> value;
  Matrix<T> grad;
};

// Named parameters with same-shape gradient buffers. 32-bit for training,
// 64-bit for gradient verification. Parameter addresses stay valid until
// the next add().
template <typename T>
class ParameterStore {
 public:
  using Scalar = T;

  Parameter<T>& add(std::string name, Eigen::Index rows, Eigen::Index cols);

  Parameter<T>& at(std::string_view name);
  const Parameter<T>& at(std::string_view name) const;
  const Parameter<T>* find(std::string_view name) const;
  bool contains(std::string_view name) const { return find(name) != nullptr; }

  Parameter<T>& operator[](std::size_t i) { return params_[i]; }
  const Parameter<T>& operator[](std::size_t i) const { return params_[i]; }
  std::size_t size() const { return params_.size(); }
  std::size_t num_scalars() const;

  // Index of a parameter owned by this store, or npos.
  std::size_t index_of(const Parameter<T>* p) const;
  static constexpr std::size_t npos = static_cast<std::size_t>(-1);

  void zero_grad();
  static constexpr Dtype dtype() { return dtype_of<T>(); }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  template <typename U>
  ParameterStore<U> cast() const {
    ParameterStore<U> out;
    for (const auto& p : params_) {
      auto& q = out.add(p.name, p.value.rows(), p.value.cols());
      q.value = p.value.template cast<U>();
    }
    return out;
  }

 private:
  std::vector<Parameter<T>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

// On-disk container: a text manifest (meta key/values, then one line per
// tensor with name, shape and dtype) followed by raw little-endian IEEE-754
// arrays in manifest order.
class Archive {
 public:
  struct Tensor {
    std::string name;
    Eigen::Index rows = 0;
    Eigen::Index cols = 0;
    Dtype dtype = Dtype::f32;
    std::string bytes;
  };

  void set_meta(std::string key, std::string value);
  const std::string* meta(std::string_view key) const;
  const std::string& require_meta(std::string_view key) const;
  const std::vector<std::pair<std::string, std::string>>& all_meta() const { return meta_; }

  template <typename T>
  void put(std::string name, const Matrix<T>& m);
  template <typename T>
  Matrix<T> get(std::string_view name) const;
  const Tensor* find(std::string_view name) const;
  const std::vector<Tensor>& tensors() const { return tensors_; }

  std::string serialize() const;
  static Archive parse(std::string_view bytes);
  void save(const std::string& path) const;
  static Archive load(const std::string& path);

 private:
  std::vector<std::pair<std::string, std::string>> meta_;
  std::vector<Tensor> tensors_;
};

template <typename T>
void save_parameters(const ParameterStore<T>& store, Archive& archive, std::string_view prefix = "param/");
template <typename T>
void load_parameters(ParameterStore<T>& store, const Archive& archive, std::string_view prefix = "param/");

}  // namespace bmtl::nn
