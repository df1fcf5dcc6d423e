#pragma once

// Graph layers over one region's cells at one time step.
//
// GAT: H' = X W_g, e_ij = LeakyReLU(a1 . H'_i + a2 . H'_j) over j in N(i) u {i},
// alpha = softmax_j(e), out_i = ReLU(sum_j alpha_ij H'_j).
// Sparse global attention: G learnable global tokens are appended to Z and a
// 0/1 allow-mask (self, hex neighbors, anything global) restricts a
// single-head attention; residual + LayerNorm; global rows are dropped at
// the end. With several blocks the updated global rows carry over, which is
// what lets information cross between disconnected cells.

#include <sstream>
#include <string>
#include <vector>

#include "alcofm/hexgrid.hpp"
#include "alcofm/layers.hpp"

namespace alcofm {

struct GatConfig {
  double leaky_slope = 0.2;

  void validate() const {
    if (!(leaky_slope > 0.0 && leaky_slope < 1.0)) throw ValidationError("leaky_slope must lie in (0, 1)");
  }
};

/// W_g: 2d x d; a: 2d x 1 (first half scores the receiving node, second half the sender).
inline void add_gat_params(ParamStore& s, std::size_t d, std::uint64_t seed, const std::string& p = "gat") {
  s.add(p + ".W", init_normal(2 * d, d, std::sqrt(2.0), seed, p + ".W"));
  s.add(p + ".a", init_normal(2 * d, 1, 1.0, seed, p + ".a"));
}

/// N x N additive bias: 0 on self-loops and lattice edges, kMaskedLogit elsewhere.
inline Tensor gat_mask_bias(const GridTopology& topo) {
  const std::size_t n = topo.size();
  Tensor b(n, n, kMaskedLogit);
  for (std::size_t i = 0; i < n; ++i) {
    b(i, i) = 0.0;
    for (auto j : topo.adjacent(i)) b(i, j) = 0.0;
  }
  return b;
}

/// x: N x 2d rows [x_num ; x_vis] in node_index order. `alpha` receives the
/// attention coefficients when non-null.
inline Var gat_forward(Graph& g, const ParamStore& s, Var x, const Tensor& mask_bias, const GatConfig& c = {},
                       Tensor* alpha = nullptr, const std::string& p = "gat") {
  c.validate();
  const std::size_t d2 = s.value(p + ".W").rows();
  if (x.cols() != d2) throw ShapeError("gat_forward: input width differs from W_g rows");
  if (mask_bias.rows() != x.rows() || mask_bias.cols() != x.rows()) throw ShapeError("gat_forward: mask size");
  Var h = matmul(x, g.param(s, p + ".W"));
  const std::size_t d = h.cols();
  Var a = g.param(s, p + ".a");
  Var e = pairwise_sum(matmul(h, slice_rows(a, 0, d)), matmul(h, slice_rows(a, d, d)));
  Var att = masked_softmax(leaky_relu(e, c.leaky_slope), mask_bias);
  if (alpha) *alpha = att.value();
  return relu(matmul(att, h));
}

struct SparseMask {
  std::size_t nodes = 0;
  std::size_t globals = 0;
  std::vector<char> allow;  // (N+G)^2 row-major

  std::size_t size() const { return nodes + globals; }
  bool operator()(std::size_t i, std::size_t j) const { return allow[i * size() + j] != 0; }

  Tensor bias() const {
    Tensor b(size(), size());
    for (std::size_t i = 0; i < size(); ++i)
      for (std::size_t j = 0; j < size(); ++j) b(i, j) = (*this)(i, j) ? 0.0 : kMaskedLogit;
    return b;
  }

  /// Row-major 0/1 text, one row per line.
  std::string to_text() const {
    std::ostringstream os;
    for (std::size_t i = 0; i < size(); ++i) {
      for (std::size_t j = 0; j < size(); ++j) os << (j ? " " : "") << ((*this)(i, j) ? 1 : 0);
      os << '\n';
    }
    return os.str();
  }
};

/// Global tokens occupy indices N .. N+G-1.
inline SparseMask build_mask(const GridTopology& topo, std::size_t G) {
  SparseMask m;
  m.nodes = topo.size();
  m.globals = G;
  const std::size_t n = m.size();
  m.allow.assign(n * n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    m.allow[i * n + i] = 1;
    for (std::size_t j = 0; j < n; ++j)
      if (i >= m.nodes || j >= m.nodes) m.allow[i * n + j] = 1;
    if (i < m.nodes)
      for (auto j : topo.adjacent(i)) m.allow[i * n + j] = 1;
  }
  return m;
}

struct SparseConfig {
  std::size_t globals = 2;
  std::size_t blocks = 2;
};

inline std::string sparse_prefix(std::size_t block) { return "sparse.b" + std::to_string(block); }

inline void add_sparse_params(ParamStore& s, std::size_t d, const SparseConfig& c, std::uint64_t seed) {
  if (c.globals > 0) s.add("sparse.global", Tensor(c.globals, d));
  for (std::size_t b = 0; b < c.blocks; ++b) {
    const auto p = sparse_prefix(b);
    add_linear(s, p + ".q", d, d, seed, false);
    add_linear(s, p + ".k", d, d, seed, false);
    add_linear(s, p + ".v", d, d, seed, false);
    add_linear(s, p + ".o", d, d, seed, false);
    add_layernorm(s, p + ".ln", d);
  }
}

/// z: N x d. Returns N x d after `blocks` masked attention blocks.
inline Var sparse_attention(Graph& g, const ParamStore& s, Var z, const SparseMask& mask, std::size_t blocks) {
  const std::size_t n = z.rows();
  if (mask.nodes != n) throw ShapeError("sparse_attention: mask node count differs from Z");
  Var h = z;
  if (mask.globals > 0) {
    Var gl = g.param(s, "sparse.global");
    if (gl.rows() != mask.globals) throw ShapeError("sparse_attention: global token count differs from mask");
    h = concat_rows({z, gl});
  }
  const Tensor bias = mask.bias();
  const double scale_factor = 1.0 / std::sqrt(static_cast<double>(z.cols()));
  for (std::size_t b = 0; b < blocks; ++b) {
    const auto p = sparse_prefix(b);
    Var logits = scale(matmul_bt(linear(g, s, p + ".q", h), linear(g, s, p + ".k", h)), scale_factor);
    Var att = masked_softmax(logits, bias);
    Var o = linear(g, s, p + ".o", matmul(att, linear(g, s, p + ".v", h)));
    h = layernorm(g, s, p + ".ln", add(h, o));
  }
  return mask.globals > 0 ? slice_rows(h, 0, n) : h;
}

}  // namespace alcofm
