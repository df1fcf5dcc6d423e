#pragma once

// Tape-based reverse-mode differentiation over 2-D tensors.
//
// A Graph owns every intermediate value created during a forward pass. Nodes
// are appended in evaluation order, so walking the tape backwards from the
// loss visits each node after all of its consumers.

#include <functional>
#include <limits>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "alcofm/params.hpp"
#include "alcofm/tensor.hpp"

namespace alcofm {

class Graph;

/// Handle to a node on a Graph tape.
struct Var {
  Graph* graph = nullptr;
  std::uint32_t id = 0;

  const Tensor& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
};

class Graph {
 public:
  /// With record = false no backward closures are kept (inference mode).
  explicit Graph(bool record = true) : record_(record) { nodes_.reserve(256); }

  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool recording() const { return record_; }

  Var constant(Tensor t) { return push(std::move(t), false); }

  /// Leaf that receives a gradient (inputs under gradient checks).
  Var variable(Tensor t) { return push(std::move(t), record_); }

  /// Binds a stored parameter once per graph; frozen parameters enter as constants.
  Var param(const ParamStore& store, const std::string& name) {
    if (auto it = bound_.find(name); it != bound_.end()) return Var{this, it->second};
    Var v = push(store.value(name), record_ && store.trainable(name));
    bound_.emplace(name, v.id);
    return v;
  }

  const Tensor& value(Var v) const { return nodes_[v.id].value; }
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }

  /// Gradient from the last backward() (zeros if nothing flowed into v).
  Tensor grad(Var v) const {
    const auto& n = nodes_[v.id];
    if (n.grad.empty()) return Tensor(n.value.rows(), n.value.cols());
    return n.grad;
  }

  Tensor& grad_ref(std::uint32_t id) {
    auto& n = nodes_[id];
    if (n.grad.empty()) n.grad = Tensor(n.value.rows(), n.value.cols());
    return n.grad;
  }

  const Tensor& upstream(std::uint32_t id) const { return nodes_[id].grad; }

  void backward(Var root) {
    if (!record_) throw std::logic_error("backward on a non-recording graph");
    if (value(root).size() != 1) throw ShapeError("backward root must be a scalar");
    for (auto& n : nodes_) n.grad = Tensor();
    if (!nodes_[root.id].requires_grad) return;
    grad_ref(root.id)[0] = 1.0;
    for (std::uint32_t i = root.id + 1; i-- > 0;) {
      auto& n = nodes_[i];
      if (n.backward && !n.grad.empty()) n.backward();
    }
  }

  /// Adds gradients of bound trainable parameters into the store.
  void accumulate_param_grads(ParamStore& store) const {
    for (const auto& [name, id] : bound_) {
      const auto& n = nodes_[id];
      if (n.requires_grad && !n.grad.empty()) store.accumulate_grad(name, n.grad);
    }
  }

  Var push(Tensor value, bool requires_grad) {
    if (nodes_.size() >= std::numeric_limits<std::uint32_t>::max()) throw std::length_error("graph too large");
    Node n;
    n.value = std::move(value);
    n.requires_grad = record_ && requires_grad;
    nodes_.push_back(std::move(n));
    return Var{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
  }

  void set_backward(Var v, std::function<void()> fn) {
    if (nodes_[v.id].requires_grad) nodes_[v.id].backward = std::move(fn);
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::function<void()> backward;
  };

  bool record_;
  std::vector<Node> nodes_;
  std::map<std::string, std::uint32_t> bound_;
};

inline const Tensor& Var::value() const { return graph->value(*this); }

namespace detail {

inline Graph& graph_of(std::initializer_list<Var> vs) {
  Graph* g = vs.begin()->graph;
  for (auto v : vs)
    if (v.graph != g) throw std::logic_error("vars belong to different graphs");
  return *g;
}

inline bool any_grad(std::initializer_list<Var> vs) {
  for (auto v : vs)
    if (v.graph->requires_grad(v)) return true;
  return false;
}

inline bool needs(Var v) { return v.graph->requires_grad(v); }

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

/// a * b; dA = dC * B^T, dB = A^T * dC.
inline Var matmul(Var a, Var b) {
  Graph& g = detail::graph_of({a, b});
  Var c = g.push(matmul_kernel(a.value(), b.value()), detail::any_grad({a, b}));
  g.set_backward(c, [&g, a, b, c] {
    const Tensor& dc = g.upstream(c.id);
    if (detail::needs(a)) add_inplace(g.grad_ref(a.id), matmul_kernel(dc, b.value(), false, true));
    if (detail::needs(b)) add_inplace(g.grad_ref(b.id), matmul_kernel(a.value(), dc, true, false));
  });
  return c;
}

/// a * b^T.
inline Var matmul_bt(Var a, Var b) {
  Graph& g = detail::graph_of({a, b});
  Var c = g.push(matmul_kernel(a.value(), b.value(), false, true), detail::any_grad({a, b}));
  g.set_backward(c, [&g, a, b, c] {
    const Tensor& dc = g.upstream(c.id);
    if (detail::needs(a)) add_inplace(g.grad_ref(a.id), matmul_kernel(dc, b.value()));
    if (detail::needs(b)) add_inplace(g.grad_ref(b.id), matmul_kernel(dc, a.value(), true, false));
  });
  return c;
}

inline Var transpose(Var a) {
  Graph& g = *a.graph;
  const Tensor& x = a.value();
  Tensor t(x.cols(), x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < x.cols(); ++j) t(j, i) = x(i, j);
  Var c = g.push(std::move(t), detail::needs(a));
  g.set_backward(c, [&g, a, c] {
    const Tensor& dc = g.upstream(c.id);
    Tensor& da = g.grad_ref(a.id);
    for (std::size_t i = 0; i < da.rows(); ++i)
      for (std::size_t j = 0; j < da.cols(); ++j) da(i, j) += dc(j, i);
  });
  return c;
}

// ---------------------------------------------------------------------------
// Elementwise

inline Var add(Var a, Var b) {
  Graph& g = detail::graph_of({a, b});
  if (!a.value().same_shape(b.value())) throw ShapeError("add shape mismatch");
  Tensor out = a.value();
  add_inplace(out, b.value());
  Var c = g.push(std::move(out), detail::any_grad({a, b}));
  g.set_backward(c, [&g, a, b, c] {
    const Tensor& dc = g.upstream(c.id);
    if (detail::needs(a)) add_inplace(g.grad_ref(a.id), dc);
    if (detail::needs(b)) add_inplace(g.grad_ref(b.id), dc);
  });
  return c;
}

inline Var sub(Var a, Var b) {
  Graph& g = detail::graph_of({a, b});
  if (!a.value().same_shape(b.value())) throw ShapeError("sub shape mismatch");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  Var c = g.push(std::move(out), detail::any_grad({a, b}));
  g.set_backward(c, [&g, a, b, c] {
    const Tensor& dc = g.upstream(c.id);
    if (detail::needs(a)) add_inplace(g.grad_ref(a.id), dc);
    if (detail::needs(b)) {
      Tensor& db = g.grad_ref(b.id);
      for (std::size_t i = 0; i < db.size(); ++i) db[i] -= dc[i];
    }
  });
  return c;
}

/// Hadamard product.
inline Var mul(Var a, Var b) {
  Graph& g = detail::graph_of({a, b});
  if (!a.value().same_shape(b.value())) throw ShapeError("mul shape mismatch");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  Var c = g.push(std::move(out), detail::any_grad({a, b}));
  g.set_backward(c, [&g, a, b, c] {
    const Tensor& dc = g.upstream(c.id);
    if (detail::needs(a)) {
      Tensor& da = g.grad_ref(a.id);
      for (std::size_t i = 0; i < da.size(); ++i) da[i] += dc[i] * b.value()[i];
    }
    if (detail::needs(b)) {
      Tensor& db = g.grad_ref(b.id);
      for (std::size_t i = 0; i < db.size(); ++i) db[i] += dc[i] * a.value()[i];
    }
  });
  return c;
}

inline Var scale(Var a, double s) {
  Graph& g = *a.graph;
  Tensor out = a.value();
  for (auto& v : out.data()) v *= s;
  Var c = g.push(std::move(out), detail::needs(a));
  g.set_backward(c, [&g, a, c, s] {
    const Tensor& dc = g.upstream(c.id);
    Tensor& da = g.grad_ref(a.id);
    for (std::size_t i = 0; i < da.size(); ++i) da[i] += s * dc[i];
  });
  return c;
}

/// x + row, broadcasting a 1 x n row over every row of x.
inline Var add_row(Var x, Var row) {
  Graph& g = detail::graph_of({x, row});
  const Tensor& xv = x.value();
  const Tensor& rv = row.value();
  if (rv.rows() != 1 || rv.cols() != xv.cols()) throw ShapeError("add_row expects a 1 x cols row");
  Tensor out = xv;
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) += rv(0, j);
  Var c = g.push(std::move(out), detail::any_grad({x, row}));
  g.set_backward(c, [&g, x, row, c] {
    const Tensor& dc = g.upstream(c.id);
    if (detail::needs(x)) add_inplace(g.grad_ref(x.id), dc);
    if (detail::needs(row)) {
      Tensor& dr = g.grad_ref(row.id);
      for (std::size_t i = 0; i < dc.rows(); ++i)
        for (std::size_t j = 0; j < dc.cols(); ++j) dr(0, j) += dc(i, j);
    }
  });
  return c;
}

/// E(i, j) = s(i) + t(j) for column vectors s (n x 1) and t (m x 1).
inline Var pairwise_sum(Var s, Var t) {
  Graph& g = detail::graph_of({s, t});
  const Tensor& sv = s.value();
  const Tensor& tv = t.value();
  if (sv.cols() != 1 || tv.cols() != 1) throw ShapeError("pairwise_sum expects column vectors");
  Tensor out(sv.rows(), tv.rows());
  for (std::size_t i = 0; i < sv.rows(); ++i)
    for (std::size_t j = 0; j < tv.rows(); ++j) out(i, j) = sv[i] + tv[j];
  Var c = g.push(std::move(out), detail::any_grad({s, t}));
  g.set_backward(c, [&g, s, t, c] {
    const Tensor& dc = g.upstream(c.id);
    if (detail::needs(s)) {
      Tensor& ds = g.grad_ref(s.id);
      for (std::size_t i = 0; i < dc.rows(); ++i)
        for (std::size_t j = 0; j < dc.cols(); ++j) ds[i] += dc(i, j);
    }
    if (detail::needs(t)) {
      Tensor& dt = g.grad_ref(t.id);
      for (std::size_t i = 0; i < dc.rows(); ++i)
        for (std::size_t j = 0; j < dc.cols(); ++j) dt[j] += dc(i, j);
    }
  });
  return c;
}

namespace detail {

template <typename F, typename DF>
Var unary(Var a, F f, DF df) {
  Graph& g = *a.graph;
  Tensor out = a.value();
  for (auto& v : out.data()) v = f(v);
  Var c = g.push(std::move(out), needs(a));
  g.set_backward(c, [&g, a, c, df] {
    const Tensor& dc = g.upstream(c.id);
    const Tensor& x = g.value(a);
    const Tensor& y = g.value(c);
    Tensor& da = g.grad_ref(a.id);
    for (std::size_t i = 0; i < da.size(); ++i) da[i] += dc[i] * df(x[i], y[i]);
  });
  return c;
}

}  // namespace detail

// NaN passes through (x <= 0 is false for NaN) so a poisoned input still
// surfaces at the loss check.
inline Var relu(Var a) {
  return detail::unary(
      a, [](double x) { return x <= 0.0 ? 0.0 : x; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

inline Var leaky_relu(Var a, double slope) {
  return detail::unary(
      a, [slope](double x) { return x > 0.0 ? x : slope * x; },
      [slope](double x, double) { return x > 0.0 ? 1.0 : slope; });
}

inline double sigmoid_scalar(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline Var sigmoid(Var a) {
  return detail::unary(a, sigmoid_scalar, [](double, double y) { return y * (1.0 - y); });
}

// ---------------------------------------------------------------------------
// Softmax family

/// Row-wise softmax of logits + mask_bias. Masked entries carry kMaskedLogit
/// and come out exactly zero. A row with no unmasked entry is rejected.
inline Tensor masked_softmax_kernel(const Tensor& logits, const Tensor* mask_bias) {
  if (mask_bias && !mask_bias->same_shape(logits)) throw ShapeError("mask shape differs from logits");
  Tensor p(logits.rows(), logits.cols());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    bool any = false;
    for (std::size_t j = 0; j < logits.cols(); ++j) {
      const double b = mask_bias ? (*mask_bias)(i, j) : 0.0;
      if (b > kMaskedLogit * 0.5) any = true;
      mx = std::max(mx, logits(i, j) + b);
    }
    if (!any) throw ValidationError("masked_softmax: row " + std::to_string(i) + " is fully masked");
    double sum = 0.0;
    for (std::size_t j = 0; j < logits.cols(); ++j) {
      const double b = mask_bias ? (*mask_bias)(i, j) : 0.0;
      const double e = std::exp(logits(i, j) + b - mx);
      p(i, j) = e;
      sum += e;
    }
    for (std::size_t j = 0; j < logits.cols(); ++j) p(i, j) /= sum;
  }
  return p;
}

/// Softmax backward for row-stochastic p: dz = p * (dp - <dp, p>_row).
inline void softmax_backward_rows(const Tensor& p, const Tensor& dp, Tensor& dz) {
  for (std::size_t i = 0; i < p.rows(); ++i) {
    double dot = 0.0;
    for (std::size_t j = 0; j < p.cols(); ++j) dot += dp(i, j) * p(i, j);
    for (std::size_t j = 0; j < p.cols(); ++j) dz(i, j) += p(i, j) * (dp(i, j) - dot);
  }
}

inline Var masked_softmax(Var logits, const Tensor& mask_bias) {
  Graph& g = *logits.graph;
  Var c = g.push(masked_softmax_kernel(logits.value(), &mask_bias), detail::needs(logits));
  g.set_backward(c, [&g, logits, c] {
    softmax_backward_rows(g.value(c), g.upstream(c.id), g.grad_ref(logits.id));
  });
  return c;
}

inline Var softmax_rows(Var logits) {
  Graph& g = *logits.graph;
  Var c = g.push(masked_softmax_kernel(logits.value(), nullptr), detail::needs(logits));
  g.set_backward(c, [&g, logits, c] {
    softmax_backward_rows(g.value(c), g.upstream(c.id), g.grad_ref(logits.id));
  });
  return c;
}

// ---------------------------------------------------------------------------
// Normalization and regularization

inline constexpr double kLayerNormEps = 1e-5;

/// Per-row standardization followed by gain * xhat + bias (gain, bias: 1 x d).
inline Var layernorm(Var x, Var gain, Var bias, double eps = kLayerNormEps) {
  Graph& g = detail::graph_of({x, gain, bias});
  const Tensor& xv = x.value();
  const std::size_t n = xv.rows(), d = xv.cols();
  if (d < 2) throw ShapeError("layernorm needs at least two features");
  if (gain.value().cols() != d || bias.value().cols() != d) throw ShapeError("layernorm affine width");
  Tensor xhat(n, d);
  std::vector<double> inv_std(n);
  for (std::size_t i = 0; i < n; ++i) {
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += xv(i, j);
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (xv(i, j) - mean) * (xv(i, j) - mean);
    var /= static_cast<double>(d);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) xhat(i, j) = (xv(i, j) - mean) * inv_std[i];
  }
  Tensor out(n, d);
  const Tensor& gv = gain.value();
  const Tensor& bv = bias.value();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) out(i, j) = gv[j] * xhat(i, j) + bv[j];
  Var c = g.push(std::move(out), detail::any_grad({x, gain, bias}));
  g.set_backward(c, [&g, x, gain, bias, c, xhat = std::move(xhat), inv_std = std::move(inv_std)] {
    const Tensor& dy = g.upstream(c.id);
    const Tensor& gv = g.value(gain);
    const std::size_t n = dy.rows(), d = dy.cols();
    if (detail::needs(gain) || detail::needs(bias)) {
      Tensor dg(1, d), db(1, d);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) {
          dg[j] += dy(i, j) * xhat(i, j);
          db[j] += dy(i, j);
        }
      if (detail::needs(gain)) add_inplace(g.grad_ref(gain.id), dg);
      if (detail::needs(bias)) add_inplace(g.grad_ref(bias.id), db);
    }
    if (detail::needs(x)) {
      Tensor& dx = g.grad_ref(x.id);
      std::vector<double> dxhat(d);
      for (std::size_t i = 0; i < n; ++i) {
        double m1 = 0.0, m2 = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
          dxhat[j] = dy(i, j) * gv[j];
          m1 += dxhat[j];
          m2 += dxhat[j] * xhat(i, j);
        }
        m1 /= static_cast<double>(d);
        m2 /= static_cast<double>(d);
        for (std::size_t j = 0; j < d; ++j) dx(i, j) += inv_std[i] * (dxhat[j] - m1 - xhat(i, j) * m2);
      }
    }
  });
  return c;
}

/// Identifies one dropout site; masks are a pure function of (seed, stream, element).
struct DropoutKey {
  std::uint64_t seed = 0;
  std::uint64_t stream = 0;
};

inline Tensor dropout_mask(std::size_t rows, std::size_t cols, double p, DropoutKey key) {
  Tensor m(rows, cols, 1.0);
  if (p <= 0.0) return m;
  const double keep_scale = 1.0 / (1.0 - p);
  for (std::size_t i = 0; i < m.size(); ++i)
    m[i] = counter_uniform(key.seed, key.stream, i) < p ? 0.0 : keep_scale;
  return m;
}

/// Inverted dropout; identity when inactive or p == 0.
inline Var dropout(Var x, double p, DropoutKey key, bool active) {
  if (p < 0.0 || p >= 1.0) throw ValidationError("dropout rate must lie in [0, 1)");
  if (!active || p == 0.0) return x;
  Graph& g = *x.graph;
  Var m = g.constant(dropout_mask(x.rows(), x.cols(), p, key));
  return mul(x, m);
}

// ---------------------------------------------------------------------------
// Shape manipulation

inline Var reshape(Var a, std::size_t rows, std::size_t cols) {
  Graph& g = *a.graph;
  Var c = g.push(a.value().reshaped(rows, cols), detail::needs(a));
  g.set_backward(c, [&g, a, c] { add_inplace(g.grad_ref(a.id), g.upstream(c.id)); });
  return c;
}

inline Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols of nothing");
  Graph& g = *parts.front().graph;
  const std::size_t n = parts.front().rows();
  std::size_t total = 0;
  bool rg = false;
  for (auto p : parts) {
    if (p.graph != &g) throw std::logic_error("vars belong to different graphs");
    if (p.rows() != n) throw ShapeError("concat_cols row mismatch");
    total += p.cols();
    rg = rg || detail::needs(p);
  }
  Tensor out(n, total);
  std::size_t off = 0;
  for (auto p : parts) {
    const Tensor& v = p.value();
    for (std::size_t i = 0; i < n; ++i)
      std::copy(v.row(i).begin(), v.row(i).end(), out.row(i).begin() + static_cast<std::ptrdiff_t>(off));
    off += v.cols();
  }
  Var c = g.push(std::move(out), rg);
  g.set_backward(c, [&g, parts, c] {
    const Tensor& dc = g.upstream(c.id);
    std::size_t off = 0;
    for (auto p : parts) {
      const std::size_t w = p.cols();
      if (detail::needs(p)) {
        Tensor& dp = g.grad_ref(p.id);
        for (std::size_t i = 0; i < dp.rows(); ++i)
          for (std::size_t j = 0; j < w; ++j) dp(i, j) += dc(i, off + j);
      }
      off += w;
    }
  });
  return c;
}

inline Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows of nothing");
  Graph& g = *parts.front().graph;
  const std::size_t d = parts.front().cols();
  std::size_t total = 0;
  bool rg = false;
  for (auto p : parts) {
    if (p.graph != &g) throw std::logic_error("vars belong to different graphs");
    if (p.cols() != d) throw ShapeError("concat_rows column mismatch");
    total += p.rows();
    rg = rg || detail::needs(p);
  }
  Tensor out(total, d);
  std::size_t off = 0;
  for (auto p : parts) {
    const auto src = p.value().data();
    std::copy(src.begin(), src.end(), out.data().begin() + static_cast<std::ptrdiff_t>(off * d));
    off += p.rows();
  }
  Var c = g.push(std::move(out), rg);
  g.set_backward(c, [&g, parts, c] {
    const Tensor& dc = g.upstream(c.id);
    std::size_t off = 0;
    for (auto p : parts) {
      const std::size_t len = p.value().size();
      if (detail::needs(p)) {
        Tensor& dp = g.grad_ref(p.id);
        for (std::size_t k = 0; k < len; ++k) dp[k] += dc[off + k];
      }
      off += len;
    }
  });
  return c;
}

inline Var slice_rows(Var a, std::size_t begin, std::size_t count) {
  Graph& g = *a.graph;
  const Tensor& v = a.value();
  if (begin + count > v.rows() || count == 0) throw ShapeError("slice_rows out of range");
  const std::size_t d = v.cols();
  std::vector<double> data(v.data().begin() + static_cast<std::ptrdiff_t>(begin * d),
                           v.data().begin() + static_cast<std::ptrdiff_t>((begin + count) * d));
  Var c = g.push(Tensor(count, d, std::move(data)), detail::needs(a));
  g.set_backward(c, [&g, a, c, begin] {
    const Tensor& dc = g.upstream(c.id);
    Tensor& da = g.grad_ref(a.id);
    const std::size_t off = begin * dc.cols();
    for (std::size_t k = 0; k < dc.size(); ++k) da[off + k] += dc[k];
  });
  return c;
}

inline Var slice_cols(Var a, std::size_t begin, std::size_t count) {
  Graph& g = *a.graph;
  const Tensor& v = a.value();
  if (begin + count > v.cols() || count == 0) throw ShapeError("slice_cols out of range");
  Tensor out(v.rows(), count);
  for (std::size_t i = 0; i < v.rows(); ++i)
    for (std::size_t j = 0; j < count; ++j) out(i, j) = v(i, begin + j);
  Var c = g.push(std::move(out), detail::needs(a));
  g.set_backward(c, [&g, a, c, begin] {
    const Tensor& dc = g.upstream(c.id);
    Tensor& da = g.grad_ref(a.id);
    for (std::size_t i = 0; i < dc.rows(); ++i)
      for (std::size_t j = 0; j < dc.cols(); ++j) da(i, begin + j) += dc(i, j);
  });
  return c;
}

/// out.row(k) = a.row(index[k]); the backward pass scatter-adds.
inline Var gather_rows(Var a, std::vector<std::size_t> index) {
  Graph& g = *a.graph;
  const Tensor& v = a.value();
  if (index.empty()) throw ShapeError("gather_rows with no indices");
  Tensor out(index.size(), v.cols());
  for (std::size_t k = 0; k < index.size(); ++k) {
    if (index[k] >= v.rows()) throw ShapeError("gather_rows index out of range");
    std::copy(v.row(index[k]).begin(), v.row(index[k]).end(), out.row(k).begin());
  }
  Var c = g.push(std::move(out), detail::needs(a));
  g.set_backward(c, [&g, a, c, index = std::move(index)] {
    const Tensor& dc = g.upstream(c.id);
    Tensor& da = g.grad_ref(a.id);
    for (std::size_t k = 0; k < index.size(); ++k)
      for (std::size_t j = 0; j < dc.cols(); ++j) da(index[k], j) += dc(k, j);
  });
  return c;
}

// ---------------------------------------------------------------------------
// Reductions

inline Var sum(Var a) {
  Graph& g = *a.graph;
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  Var c = g.push(Tensor(1, 1, s), detail::needs(a));
  g.set_backward(c, [&g, a, c] {
    const double dc = g.upstream(c.id)[0];
    for (auto& v : g.grad_ref(a.id).data()) v += dc;
  });
  return c;
}

inline Var mean(Var a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

/// Mean over rows: n x d -> 1 x d.
inline Var mean_rows(Var a) {
  const std::size_t n = a.rows();
  return scale(matmul(a.graph->constant(Tensor(1, n, 1.0)), a), 1.0 / static_cast<double>(n));
}

/// Row-segment means: segment s covers rows [offsets[s], offsets[s+1]).
inline Var segment_mean(Var a, std::vector<std::size_t> offsets) {
  Graph& g = *a.graph;
  const Tensor& v = a.value();
  if (offsets.size() < 2 || offsets.back() != v.rows()) throw ShapeError("segment offsets must cover all rows");
  const std::size_t segs = offsets.size() - 1;
  Tensor out(segs, v.cols());
  for (std::size_t s = 0; s < segs; ++s) {
    const std::size_t len = offsets[s + 1] - offsets[s];
    if (len == 0) throw ShapeError("empty segment");
    for (std::size_t i = offsets[s]; i < offsets[s + 1]; ++i)
      for (std::size_t j = 0; j < v.cols(); ++j) out(s, j) += v(i, j);
    for (std::size_t j = 0; j < v.cols(); ++j) out(s, j) /= static_cast<double>(len);
  }
  Var c = g.push(std::move(out), detail::needs(a));
  g.set_backward(c, [&g, a, c, offsets = std::move(offsets)] {
    const Tensor& dc = g.upstream(c.id);
    Tensor& da = g.grad_ref(a.id);
    for (std::size_t s = 0; s + 1 < offsets.size(); ++s) {
      const double inv = 1.0 / static_cast<double>(offsets[s + 1] - offsets[s]);
      for (std::size_t i = offsets[s]; i < offsets[s + 1]; ++i)
        for (std::size_t j = 0; j < dc.cols(); ++j) da(i, j) += dc(s, j) * inv;
    }
  });
  return c;
}

/// Applies a constant g x g matrix to each consecutive block of g rows.
inline Var blockwise_left_mul(const Tensor& op, Var x) {
  Graph& g = *x.graph;
  const std::size_t b = op.rows();
  if (op.cols() != b || x.rows() % b != 0) throw ShapeError("blockwise_left_mul block size");
  const std::size_t blocks = x.rows() / b, d = x.cols();
  Tensor out(x.rows(), d);
  const auto opv = detail::view(op);
  for (std::size_t k = 0; k < blocks; ++k) {
    auto ov = detail::view(out).middleRows(static_cast<Eigen::Index>(k * b), static_cast<Eigen::Index>(b));
    ov.noalias() = opv * detail::view(x.value()).middleRows(static_cast<Eigen::Index>(k * b),
                                                             static_cast<Eigen::Index>(b));
  }
  Var c = g.push(std::move(out), detail::needs(x));
  g.set_backward(c, [&g, x, c, op, b, blocks] {
    const Tensor& dc = g.upstream(c.id);
    Tensor& dx = g.grad_ref(x.id);
    const auto opv = detail::view(op);
    for (std::size_t k = 0; k < blocks; ++k) {
      const auto r0 = static_cast<Eigen::Index>(k * b);
      const auto rb = static_cast<Eigen::Index>(b);
      detail::view(dx).middleRows(r0, rb).noalias() += opv.transpose() * detail::view(dc).middleRows(r0, rb);
    }
  });
  return c;
}

// ---------------------------------------------------------------------------
// Segmented multi-head attention

/// Row ranges pairing each query segment with its key segment.
struct Segments {
  std::vector<std::size_t> query_offsets;  // size S + 1
  std::vector<std::size_t> key_offsets;    // size S + 1

  static Segments uniform(std::size_t count, std::size_t q_len, std::size_t k_len) {
    Segments s;
    for (std::size_t i = 0; i <= count; ++i) {
      s.query_offsets.push_back(i * q_len);
      s.key_offsets.push_back(i * k_len);
    }
    return s;
  }
};

/// For every segment and head: softmax(Q_s K_s^T * scale) V_s. Heads split
/// the columns of q/k (width heads * dk) and v (width heads * dv) evenly.
/// When weights is non-null it receives the attention matrices, [segment][head].
inline Var segment_attention(Var q, Var k, Var v, const Segments& seg, std::size_t heads, double scale_factor,
                             std::vector<std::vector<Tensor>>* weights = nullptr) {
  using RowMap = Eigen::Map<detail::RowMat>;
  Graph& g = detail::graph_of({q, k, v});
  const Tensor& qv = q.value();
  const Tensor& kv = k.value();
  const Tensor& vv = v.value();
  const std::size_t S = seg.query_offsets.size() - 1;
  if (seg.key_offsets.size() != S + 1 || seg.query_offsets.back() != qv.rows() || seg.key_offsets.back() != kv.rows())
    throw ShapeError("segment offsets do not match q/k rows");
  if (kv.rows() != vv.rows()) throw ShapeError("keys and values differ in length");
  if (qv.cols() != kv.cols() || qv.cols() % heads != 0 || vv.cols() % heads != 0)
    throw ShapeError("attention head split");
  const std::size_t dk = qv.cols() / heads, dv = vv.cols() / heads;

  // All attention matrices live in one buffer: segment s, head h starts at
  // offset[s] + h * nq * nk.
  auto offset = std::make_shared<std::vector<std::size_t>>(S + 1, 0);
  for (std::size_t s = 0; s < S; ++s) {
    const std::size_t nq = seg.query_offsets[s + 1] - seg.query_offsets[s];
    const std::size_t nk = seg.key_offsets[s + 1] - seg.key_offsets[s];
    if (nk == 0) throw ValidationError("attention segment has no keys");
    (*offset)[s + 1] = (*offset)[s] + heads * nq * nk;
  }
  auto attn = std::make_shared<std::vector<double>>(offset->back());
  Tensor out(qv.rows(), vv.cols());
  const auto Qm = detail::view(qv);
  const auto Km = detail::view(kv);
  const auto Vm = detail::view(vv);
  auto Om = detail::view(out);
  for (std::size_t s = 0; s < S; ++s) {
    const auto q0 = static_cast<Eigen::Index>(seg.query_offsets[s]);
    const auto nq = static_cast<Eigen::Index>(seg.query_offsets[s + 1] - seg.query_offsets[s]);
    const auto k0 = static_cast<Eigen::Index>(seg.key_offsets[s]);
    const auto nk = static_cast<Eigen::Index>(seg.key_offsets[s + 1] - seg.key_offsets[s]);
    if (nq == 0) continue;
    for (std::size_t h = 0; h < heads; ++h) {
      const auto hk = static_cast<Eigen::Index>(h * dk);
      const auto hv = static_cast<Eigen::Index>(h * dv);
      RowMap P(attn->data() + (*offset)[s] + h * static_cast<std::size_t>(nq * nk), nq, nk);
      P.noalias() = scale_factor * Qm.block(q0, hk, nq, static_cast<Eigen::Index>(dk)) *
                    Km.block(k0, hk, nk, static_cast<Eigen::Index>(dk)).transpose();
      for (Eigen::Index i = 0; i < nq; ++i) {
        const double mx = P.row(i).maxCoeff();
        double sum = 0.0;
        for (Eigen::Index j = 0; j < nk; ++j) sum += (P(i, j) = std::exp(P(i, j) - mx));
        for (Eigen::Index j = 0; j < nk; ++j) P(i, j) /= sum;
      }
      Om.block(q0, hv, nq, static_cast<Eigen::Index>(dv)).noalias() =
          P * Vm.block(k0, hv, nk, static_cast<Eigen::Index>(dv));
    }
  }
  if (weights) {
    weights->assign(S, {});
    for (std::size_t s = 0; s < S; ++s) {
      const std::size_t nq = seg.query_offsets[s + 1] - seg.query_offsets[s];
      const std::size_t nk = seg.key_offsets[s + 1] - seg.key_offsets[s];
      for (std::size_t h = 0; h < heads; ++h) {
        const auto b = attn->begin() + static_cast<std::ptrdiff_t>((*offset)[s] + h * nq * nk);
        (*weights)[s].emplace_back(nq, nk, std::vector<double>(b, b + static_cast<std::ptrdiff_t>(nq * nk)));
      }
    }
  }
  Var c = g.push(std::move(out), detail::any_grad({q, k, v}));
  g.set_backward(c, [&g, q, k, v, c, seg, heads, dk, dv, scale_factor, attn, offset] {
    const Tensor& dout = g.upstream(c.id);
    const auto Qm = detail::view(g.value(q));
    const auto Km = detail::view(g.value(k));
    const auto Vm = detail::view(g.value(v));
    const auto dO = detail::view(dout);
    Tensor dq_t(g.value(q).rows(), g.value(q).cols());
    Tensor dk_t(g.value(k).rows(), g.value(k).cols());
    Tensor dv_t(g.value(v).rows(), g.value(v).cols());
    auto dQ = detail::view(dq_t);
    auto dK = detail::view(dk_t);
    auto dV = detail::view(dv_t);
    std::vector<double> scratch;
    const std::size_t S = seg.query_offsets.size() - 1;
    for (std::size_t s = 0; s < S; ++s) {
      const auto q0 = static_cast<Eigen::Index>(seg.query_offsets[s]);
      const auto nq = static_cast<Eigen::Index>(seg.query_offsets[s + 1] - seg.query_offsets[s]);
      const auto k0 = static_cast<Eigen::Index>(seg.key_offsets[s]);
      const auto nk = static_cast<Eigen::Index>(seg.key_offsets[s + 1] - seg.key_offsets[s]);
      if (nq == 0) continue;
      scratch.resize(static_cast<std::size_t>(nq * nk));
      RowMap dZ(scratch.data(), nq, nk);
      for (std::size_t h = 0; h < heads; ++h) {
        const auto hk = static_cast<Eigen::Index>(h * dk);
        const auto hv = static_cast<Eigen::Index>(h * dv);
        const auto edk = static_cast<Eigen::Index>(dk);
        const auto edv = static_cast<Eigen::Index>(dv);
        const Eigen::Map<const detail::RowMat> P(attn->data() + (*offset)[s] + h * static_cast<std::size_t>(nq * nk),
                                                 nq, nk);
        const auto dOb = dO.block(q0, hv, nq, edv);
        dV.block(k0, hv, nk, edv).noalias() += P.transpose() * dOb;
        dZ.noalias() = dOb * Vm.block(k0, hv, nk, edv).transpose();  // dP
        for (Eigen::Index i = 0; i < nq; ++i) {
          const double dot = dZ.row(i).dot(P.row(i));
          for (Eigen::Index j = 0; j < nk; ++j) dZ(i, j) = P(i, j) * (dZ(i, j) - dot);
        }
        dQ.block(q0, hk, nq, edk).noalias() += scale_factor * dZ * Km.block(k0, hk, nk, edk);
        dK.block(k0, hk, nk, edk).noalias() += scale_factor * dZ.transpose() * Qm.block(q0, hk, nq, edk);
      }
    }
    if (detail::needs(q)) add_inplace(g.grad_ref(q.id), dq_t);
    if (detail::needs(k)) add_inplace(g.grad_ref(k.id), dk_t);
    if (detail::needs(v)) add_inplace(g.grad_ref(v.id), dv_t);
  });
  return c;
}

// ---------------------------------------------------------------------------
// Loss

inline constexpr double kProbClamp = 1e-7;

/// Mean over rows of -w1 y log p - w0 (1 - y) log(1 - p) with p clamped to
/// [1e-7, 1 - 1e-7]; clamped entries pass no gradient.
inline Var weighted_bce_mean(Var probs, const std::vector<double>& labels, double w0, double w1) {
  Graph& g = *probs.graph;
  const Tensor& p = probs.value();
  if (p.cols() != 1 || p.rows() != labels.size()) throw ShapeError("weighted_bce expects n x 1 probabilities");
  const double n = static_cast<double>(labels.size());
  double loss = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double pc = std::clamp(p[i], kProbClamp, 1.0 - kProbClamp);
    loss += -w1 * labels[i] * std::log(pc) - w0 * (1.0 - labels[i]) * std::log(1.0 - pc);
  }
  Var c = g.push(Tensor(1, 1, loss / n), detail::needs(probs));
  g.set_backward(c, [&g, probs, c, labels, w0, w1, n] {
    const double dc = g.upstream(c.id)[0];
    const Tensor& p = g.value(probs);
    Tensor& dp = g.grad_ref(probs.id);
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (p[i] < kProbClamp || p[i] > 1.0 - kProbClamp) continue;
      dp[i] += dc * (-w1 * labels[i] / p[i] + w0 * (1.0 - labels[i]) / (1.0 - p[i])) / n;
    }
  });
  return c;
}

}  // namespace alcofm
