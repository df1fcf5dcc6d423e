#pragma once

// Bidirectional cross-modal attention. Each layer runs num->vis on the
// current states, then vis->num using the updated numeric states; every
// direction is single-head with residual + LayerNorm. After the last layer
// both modalities are mean-pooled per sample.

#include <string>
#include <vector>

#include "alcofm/encoders.hpp"
#include "alcofm/layers.hpp"

namespace alcofm {

struct FusionConfig {
  static constexpr std::size_t reference_dh = 128;  // full-scale width; desk runs use less
  std::size_t d_h = 32;
  std::size_t layers = 2;
};

inline std::string fusion_prefix(std::size_t layer, bool num_to_vis) {
  return "fuse.l" + std::to_string(layer) + (num_to_vis ? ".nv" : ".vn");
}

inline void add_cross_attn_params(ParamStore& s, const std::string& p, std::size_t d, std::size_t d_h,
                                  std::uint64_t seed) {
  add_linear(s, p + ".q", d, d_h, seed, false);
  add_linear(s, p + ".k", d, d_h, seed, false);
  add_linear(s, p + ".v", d, d_h, seed, false);
  add_linear(s, p + ".o", d_h, d, seed, false);
  add_layernorm(s, p + ".ln", d);
}

inline void add_fusion_params(ParamStore& s, std::size_t d, const FusionConfig& c, std::uint64_t seed) {
  for (std::size_t l = 0; l < c.layers; ++l)
    for (bool nv : {true, false}) add_cross_attn_params(s, fusion_prefix(l, nv), d, c.d_h, seed);
}

/// LN(q + softmax(q Wq (kv Wk)^T / sqrt(d_h)) (kv Wv) Wo), per segment pair.
/// `weights` (optional) receives each segment's attention matrix.
inline Var cross_attend(Graph& g, const ParamStore& s, const std::string& p, Var queries, Var kv,
                        const Segments& seg, std::vector<Tensor>* weights = nullptr) {
  if (queries.cols() != kv.cols()) throw ShapeError("cross_attend: modalities differ in width");
  const std::size_t d_h = s.value(p + ".q.W").cols();
  std::vector<std::vector<Tensor>> w;
  Var a = segment_attention(linear(g, s, p + ".q", queries), linear(g, s, p + ".k", kv), linear(g, s, p + ".v", kv),
                            seg, 1, 1.0 / std::sqrt(static_cast<double>(d_h)), weights ? &w : nullptr);
  if (weights) {
    weights->clear();
    for (auto& per_seg : w) weights->push_back(std::move(per_seg.front()));
  }
  return layernorm(g, s, p + ".ln", add(queries, linear(g, s, p + ".o", a)));
}

struct FusedBatch {
  Var x_num;  // B x d
  Var x_vis;  // B x d
};

/// Batched fusion: sample b owns numeric rows [num_off[b], num_off[b+1]) and
/// visual rows [vis_off[b], vis_off[b+1]).
inline FusedBatch fuse_rows(Graph& g, const ParamStore& s, const FusionConfig& c, Var num, Var vis,
                            const std::vector<std::size_t>& num_off, const std::vector<std::size_t>& vis_off,
                            std::vector<std::vector<Tensor>>* weights = nullptr) {
  if (num_off.size() != vis_off.size()) throw ValidationError("fuse: sample counts differ");
  const Segments nv{num_off, vis_off};
  const Segments vn{vis_off, num_off};
  for (std::size_t l = 0; l < c.layers; ++l) {
    std::vector<Tensor> w1, w2;
    num = cross_attend(g, s, fusion_prefix(l, true), num, vis, nv, weights ? &w1 : nullptr);
    vis = cross_attend(g, s, fusion_prefix(l, false), vis, num, vn, weights ? &w2 : nullptr);
    if (weights) {
      weights->push_back(std::move(w1));
      weights->push_back(std::move(w2));
    }
  }
  return {segment_mean(num, num_off), segment_mean(vis, vis_off)};
}

/// Fusion disabled: per-modality mean-pools of the raw tokens.
inline FusedBatch pool_rows(Var num, Var vis, const std::vector<std::size_t>& num_off,
                            const std::vector<std::size_t>& vis_off) {
  return {segment_mean(num, num_off), segment_mean(vis, vis_off)};
}

/// Single-sample fusion over w-hour token sequences of both modalities.
inline FusedBatch fuse(Graph& g, const ParamStore& s, const FusionConfig& c, const TokenSeq& num, const TokenSeq& vis,
                       std::vector<std::vector<Tensor>>* weights = nullptr) {
  if (num.hours_covered != vis.hours_covered) throw ValidationError("fuse: modalities cover different hours");
  return fuse_rows(g, s, c, num.tokens, vis.tokens, {0, num.tokens.rows()}, {0, vis.tokens.rows()}, weights);
}

}  // namespace alcofm
