#pragma once

// Dense row-major double tensor plus the counter-based RNG shared by every
// stochastic component (dropout masks, parameter init, synthetic data).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

namespace alcofm {

struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct ValidationError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Additive bias standing in for -inf at masked attention entries.
inline constexpr double kMaskedLogit = -1e30;

class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0)
      : shape_(std::move(shape)) {
    for (auto s : shape_) {
      if (s == 0) throw ShapeError("tensor dimensions must be positive");
    }
    data_.assign(count(shape_), fill);
  }

  Tensor(std::size_t rows, std::size_t cols, double fill = 0.0)
      : Tensor(std::vector<std::size_t>{rows, cols}, fill) {}

  Tensor(std::size_t rows, std::size_t cols, std::vector<double> data)
      : shape_{rows, cols}, data_(std::move(data)) {
    if (rows == 0 || cols == 0) throw ShapeError("tensor dimensions must be positive");
    if (data_.size() != rows * cols) throw ShapeError("data size does not match shape");
  }

  /// Row-major literal, e.g. Tensor::from_rows({{1, 2}, {3, 4}}).
  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<double> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
      if (row.size() != c) throw ShapeError("ragged row literal");
      data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor(r, c, std::move(data));
  }

  static Tensor row_vector(std::span<const double> v) {
    return Tensor(1, v.size(), std::vector<double>(v.begin(), v.end()));
  }

  static Tensor identity(std::size_t n) {
    Tensor t(n, n);
    for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
    return t;
  }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  // Rank-1 tensors behave as a single row.
  std::size_t rows() const { return shape_.size() >= 2 ? shape_[0] : (shape_.empty() ? 0 : 1); }
  std::size_t cols() const { return shape_.empty() ? 0 : shape_.back(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double>& storage() { return data_; }
  const std::vector<double>& storage() const { return data_; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols(), cols()}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols(), cols()}; }

  bool same_shape(const Tensor& o) const { return rows() == o.rows() && cols() == o.cols(); }

  /// Reinterprets the row-major buffer with a new 2-D shape.
  Tensor reshaped(std::size_t r, std::size_t c) const {
    if (r * c != size()) throw ShapeError("reshape changes element count");
    return Tensor(r, c, data_);
  }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

  std::string shape_string() const {
    std::string s = "[";
    for (std::size_t i = 0; i < shape_.size(); ++i) {
      if (i) s += "x";
      s += std::to_string(shape_[i]);
    }
    return s + "]";
  }

 private:
  static std::size_t count(const std::vector<std::size_t>& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
  }

  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

namespace detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline Eigen::Map<const RowMat> view(const Tensor& t) {
  return {t.data().data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols())};
}

inline Eigen::Map<RowMat> view(Tensor& t) {
  return {t.data().data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols())};
}

}  // namespace detail

// Plain (non-differentiable) kernels. The differentiable versions in
// autodiff.hpp call these for both the forward and backward passes.

/// C = A * B, or with transposes A^T * B / A * B^T.
inline Tensor matmul_kernel(const Tensor& a, const Tensor& b, bool trans_a = false, bool trans_b = false) {
  const std::size_t m = trans_a ? a.cols() : a.rows();
  const std::size_t ka = trans_a ? a.rows() : a.cols();
  const std::size_t kb = trans_b ? b.cols() : b.rows();
  const std::size_t n = trans_b ? b.rows() : b.cols();
  if (ka != kb) {
    throw ShapeError("matmul inner dimensions disagree: " + a.shape_string() + " * " + b.shape_string());
  }
  Tensor c(m, n);
  auto cv = detail::view(c);
  const auto av = detail::view(a);
  const auto bv = detail::view(b);
  if (!trans_a && !trans_b) cv.noalias() = av * bv;
  else if (trans_a && !trans_b) cv.noalias() = av.transpose() * bv;
  else if (!trans_a && trans_b) cv.noalias() = av * bv.transpose();
  else cv.noalias() = av.transpose() * bv.transpose();
  return c;
}

inline void add_inplace(Tensor& dst, const Tensor& src) {
  if (dst.size() != src.size()) throw ShapeError("add_inplace size mismatch");
  auto d = dst.data();
  auto s = src.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.size() != b.size()) throw ShapeError("max_abs_diff size mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// ---------------------------------------------------------------------------
// Counter-based randomness: every draw is a pure function of
// (seed, stream, counter), so results do not depend on call order or threads.

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

inline std::uint64_t counter_hash(std::uint64_t seed, std::uint64_t stream, std::uint64_t counter) {
  return splitmix64(splitmix64(splitmix64(seed) ^ stream) ^ counter);
}

/// Uniform in [0, 1) with 53 random bits.
inline double counter_uniform(std::uint64_t seed, std::uint64_t stream, std::uint64_t counter) {
  return static_cast<double>(counter_hash(seed, stream, counter) >> 11) * 0x1.0p-53;
}

/// FNV-1a, used to derive stream ids from parameter names.
inline std::uint64_t stream_id(std::string_view name) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : name) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

/// Sequential generator over a counter stream.
class CounterRng {
 public:
  CounterRng(std::uint64_t seed, std::uint64_t stream) : seed_(seed), stream_(stream) {}

  double uniform() { return counter_uniform(seed_, stream_, counter_++); }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller (one value per two uniforms).
  double normal() {
    double u1 = uniform();
    const double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  std::uint64_t below(std::uint64_t n) { return counter_hash(seed_, stream_, counter_++) % n; }

  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t counter_ = 0;
};

template <typename T>
void shuffle_in_place(std::vector<T>& v, CounterRng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::swap(v[i - 1], v[rng.below(i)]);
  }
}

// ---------------------------------------------------------------------------
// Debug dump: u32 rank, u64 dims, then little-endian doubles.

inline void write_tensor_binary(const Tensor& t, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path);
  const auto rank = static_cast<std::uint32_t>(t.rank());
  out.write(reinterpret_cast<const char*>(&rank), sizeof rank);
  for (auto d : t.shape()) {
    const auto d64 = static_cast<std::uint64_t>(d);
    out.write(reinterpret_cast<const char*>(&d64), sizeof d64);
  }
  out.write(reinterpret_cast<const char*>(t.data().data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
}

inline Tensor read_tensor_binary(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::uint32_t rank = 0;
  in.read(reinterpret_cast<char*>(&rank), sizeof rank);
  std::vector<std::size_t> shape(rank);
  for (auto& d : shape) {
    std::uint64_t d64 = 0;
    in.read(reinterpret_cast<char*>(&d64), sizeof d64);
    d = static_cast<std::size_t>(d64);
  }
  Tensor t(shape);
  in.read(reinterpret_cast<char*>(t.data().data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
  if (!in) throw std::runtime_error("truncated tensor file " + path);
  return t;
}

}  // namespace alcofm
