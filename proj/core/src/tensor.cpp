#include "bmtl/tensor.hpp"

#include <bit>
#include <cstring>

#include "bmtl/error.hpp"
#include "bmtl/util.hpp"

namespace bmtl::nn {

static_assert(std::endian::native == std::endian::little, "archive I/O assumes a little-endian host");

namespace {
constexpr std::string_view kArchiveMagic = "#bmtl-archive";
constexpr std::string_view kArchiveHeader = "#bmtl-archive v1";
}  // namespace

std::string_view dtype_name(Dtype d) { return d == Dtype::f32 ? "f32" : "f64"; }

Dtype parse_dtype(std::string_view name) {
  if (name == "f32") return Dtype::f32;
  if (name == "f64") return Dtype::f64;
  throw IoError("unknown dtype '" + std::string(name) + "'");
}

template <typename T>
Parameter<T>& ParameterStore<T>::add(std::string name, Eigen::Index rows, Eigen::Index cols) {
  if (index_.count(name)) throw ValidationError("duplicate parameter name '" + name + "'");
  index_.emplace(name, params_.size());
  params_.push_back({std::move(name), Matrix<T>::Zero(rows, cols), Matrix<T>::Zero(rows, cols)});
  return params_.back();
}

template <typename T>
const Parameter<T>* ParameterStore<T>::find(std::string_view name) const {
  auto it = index_.find(std::string(name));
  return it == index_.end() ? nullptr : &params_[it->second];
}

template <typename T>
Parameter<T>& ParameterStore<T>::at(std::string_view name) {
  return const_cast<Parameter<T>&>(static_cast<const ParameterStore&>(*this).at(name));
}

template <typename T>
const Parameter<T>& ParameterStore<T>::at(std::string_view name) const {
  const auto* p = find(name);
  if (!p) throw ValidationError("no parameter named '" + std::string(name) + "'");
  return *p;
}

template <typename T>
std::size_t ParameterStore<T>::num_scalars() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
  return n;
}

template <typename T>
std::size_t ParameterStore<T>::index_of(const Parameter<T>* p) const {
  if (params_.empty() || p < params_.data() || p >= params_.data() + params_.size()) return npos;
  return static_cast<std::size_t>(p - params_.data());
}

template <typename T>
void ParameterStore<T>::zero_grad() {
  for (auto& p : params_) p.grad.setZero();
}

template class ParameterStore<float>;
template class ParameterStore<double>;

void Archive::set_meta(std::string key, std::string value) {
  if (key.find_first_of("\t\n") != std::string::npos || value.find_first_of("\t\n") != std::string::npos) {
    throw ValidationError("archive meta '" + key + "' may not contain tabs or newlines");
  }
  for (auto& [k, v] : meta_) {
    if (k == key) {
      v = std::move(value);
      return;
    }
  }
  meta_.emplace_back(std::move(key), std::move(value));
}

const std::string* Archive::meta(std::string_view key) const {
  for (const auto& [k, v] : meta_) {
    if (k == key) return &v;
  }
  return nullptr;
}

const std::string& Archive::require_meta(std::string_view key) const {
  const auto* v = meta(key);
  if (!v) throw IoError("archive is missing meta field '" + std::string(key) + "'");
  return *v;
}

template <typename T>
void Archive::put(std::string name, const Matrix<T>& m) {
  Tensor t{std::move(name), m.rows(), m.cols(), dtype_of<T>(), {}};
  t.bytes.resize(static_cast<std::size_t>(m.size()) * sizeof(T));
  if (m.size()) std::memcpy(t.bytes.data(), m.data(), t.bytes.size());
  tensors_.push_back(std::move(t));
}

template <typename T>
Matrix<T> Archive::get(std::string_view name) const {
  const Tensor* t = find(name);
  if (!t) throw IoError("archive has no tensor '" + std::string(name) + "'");
  if (t->dtype != dtype_of<T>()) {
    throw IoError("tensor '" + t->name + "' stored as " + std::string(dtype_name(t->dtype)) + ", requested " +
                  std::string(dtype_name(dtype_of<T>())));
  }
  Matrix<T> m(t->rows, t->cols);
  if (m.size()) std::memcpy(m.data(), t->bytes.data(), t->bytes.size());
  return m;
}

template void Archive::put<float>(std::string, const Matrix<float>&);
template void Archive::put<double>(std::string, const Matrix<double>&);
template Matrix<float> Archive::get<float>(std::string_view) const;
template Matrix<double> Archive::get<double>(std::string_view) const;

const Archive::Tensor* Archive::find(std::string_view name) const {
  for (const auto& t : tensors_) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

std::string Archive::serialize() const {
  std::string out(kArchiveHeader);
  out += '\n';
  for (const auto& [k, v] : meta_) out += "meta\t" + k + '\t' + v + '\n';
  for (const auto& t : tensors_) {
    out += "tensor\t" + t.name + '\t' + std::to_string(t.rows) + '\t' + std::to_string(t.cols) + '\t' +
           std::string(dtype_name(t.dtype)) + '\n';
  }
  out += "end\n";
  for (const auto& t : tensors_) out += t.bytes;
  return out;
}

Archive Archive::parse(std::string_view bytes) {
  std::size_t pos = 0;
  auto next_line = [&]() -> std::string_view {
    const auto nl = bytes.find('\n', pos);
    if (nl == std::string_view::npos) throw TruncatedFileError("archive manifest is truncated");
    auto line = bytes.substr(pos, nl - pos);
    pos = nl + 1;
    return line;
  };
  if (bytes.substr(0, kArchiveMagic.size()) != kArchiveMagic) throw IoError("not a bmtl archive");
  if (auto header = next_line(); header != kArchiveHeader) {
    throw VersionMismatchError("unsupported archive version '" + std::string(header) + "'");
  }
  Archive a;
  for (;;) {
    const auto line = next_line();
    if (line == "end") break;
    const auto f = split(line, '\t');
    if (f.size() == 3 && f[0] == "meta") {
      a.meta_.emplace_back(f[1], f[2]);
    } else if (f.size() == 5 && f[0] == "tensor") {
      Tensor t;
      t.name = f[1];
      t.rows = std::stol(f[2]);
      t.cols = std::stol(f[3]);
      t.dtype = parse_dtype(f[4]);
      a.tensors_.push_back(std::move(t));
    } else {
      throw IoError("malformed archive manifest line '" + std::string(line) + "'");
    }
  }
  for (auto& t : a.tensors_) {
    const std::size_t width = t.dtype == Dtype::f32 ? 4 : 8;
    const std::size_t n = static_cast<std::size_t>(t.rows * t.cols) * width;
    if (pos + n > bytes.size()) throw TruncatedFileError("archive data is truncated at tensor '" + t.name + "'");
    t.bytes.assign(bytes.substr(pos, n));
    pos += n;
  }
  if (pos != bytes.size()) throw IoError("archive has trailing bytes");
  return a;
}

void Archive::save(const std::string& path) const { write_file(path, serialize()); }
Archive Archive::load(const std::string& path) { return parse(read_file(path)); }

template <typename T>
void save_parameters(const ParameterStore<T>& store, Archive& archive, std::string_view prefix) {
  for (const auto& p : store) archive.put<T>(std::string(prefix) + p.name, p.value);
}

template <typename T>
void load_parameters(ParameterStore<T>& store, const Archive& archive, std::string_view prefix) {
  for (auto& p : store) {
    auto m = archive.get<T>(std::string(prefix) + p.name);
    if (m.rows() != p.value.rows() || m.cols() != p.value.cols()) {
      throw IoError("shape mismatch for parameter '" + p.name + "'");
    }
    p.value = std::move(m);
  }
}

template void save_parameters<float>(const ParameterStore<float>&, Archive&, std::string_view);
template void save_parameters<double>(const ParameterStore<double>&, Archive&, std::string_view);
template void load_parameters<float>(ParameterStore<float>&, const Archive&, std::string_view);
template void load_parameters<double>(ParameterStore<double>&, const Archive&, std::string_view);

}  // namespace bmtl::nn
