#pragma once

// Parameterized building blocks shared by the encoders, fusion and spatial
// layers. Every block reads its weights from a ParamStore by name prefix.

#include <cmath>
#include <string>

#include "alcofm/autodiff.hpp"

namespace alcofm {

inline void add_linear(ParamStore& s, const std::string& name, std::size_t in, std::size_t out, std::uint64_t seed,
                       bool bias = true, double gain = 1.0) {
  s.add(name + ".W", init_normal(in, out, gain, seed, name + ".W"));
  if (bias) s.add(name + ".b", Tensor(1, out));
}

inline Var linear(Graph& g, const ParamStore& s, const std::string& name, Var x) {
  Var y = matmul(x, g.param(s, name + ".W"));
  if (s.contains(name + ".b")) y = add_row(y, g.param(s, name + ".b"));
  return y;
}

inline void add_layernorm(ParamStore& s, const std::string& name, std::size_t d) {
  s.add(name + ".g", Tensor(1, d, 1.0));
  s.add(name + ".b", Tensor(1, d, 0.0));
}

inline Var layernorm(Graph& g, const ParamStore& s, const std::string& name, Var x) {
  return layernorm(x, g.param(s, name + ".g"), g.param(s, name + ".b"));
}

/// Pre-LN transformer block (ViT style): multi-head self-attention within each
/// segment, then a ReLU feed-forward of width 2d, each on a normalized copy
/// added back to the residual stream. Token magnitude survives the block, so
/// the volatility score sees input spread.
inline void add_transformer_block(ParamStore& s, const std::string& p, std::size_t d, std::uint64_t seed) {
  add_linear(s, p + ".q", d, d, seed, false);
  add_linear(s, p + ".k", d, d, seed, false);
  add_linear(s, p + ".v", d, d, seed, false);
  add_linear(s, p + ".o", d, d, seed);
  add_layernorm(s, p + ".ln1", d);
  add_linear(s, p + ".ff1", d, 2 * d, seed, true, std::sqrt(2.0));
  add_linear(s, p + ".ff2", 2 * d, d, seed);
  add_layernorm(s, p + ".ln2", d);
}

inline Var transformer_block(Graph& g, const ParamStore& s, const std::string& p, Var x, const Segments& seg,
                             std::size_t heads) {
  const std::size_t d = x.cols();
  const double scale_factor = 1.0 / std::sqrt(static_cast<double>(d / heads));
  Var n1 = layernorm(g, s, p + ".ln1", x);
  Var a = segment_attention(linear(g, s, p + ".q", n1), linear(g, s, p + ".k", n1), linear(g, s, p + ".v", n1), seg,
                            heads, scale_factor);
  Var x1 = add(x, linear(g, s, p + ".o", a));
  Var f = linear(g, s, p + ".ff2", relu(linear(g, s, p + ".ff1", layernorm(g, s, p + ".ln2", x1))));
  return add(x1, f);
}

}  // namespace alcofm
