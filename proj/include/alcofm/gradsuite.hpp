#pragma once

// The layer-by-layer finite-difference suite: every differentiable operation
// checked through its inputs and (where it has any) its parameters, on small
// random instances. Shared by the CLI `gradcheck` command and the acceptance
// run.

#include <string>
#include <vector>

#include "alcofm/encoders.hpp"
#include "alcofm/fusion.hpp"
#include "alcofm/gradcheck.hpp"
#include "alcofm/headcalib.hpp"
#include "alcofm/hexgrid.hpp"
#include "alcofm/spatial.hpp"

namespace alcofm {

struct GradCheckRow {
  std::string op;
  double max_rel_error = 0.0;
  bool pass = false;
};

inline constexpr double kGradTolerance = 1e-5;

namespace detail {

inline Tensor suite_tensor(std::size_t r, std::size_t c, std::uint64_t seed, double scale = 1.0) {
  CounterRng rng(seed, stream_id("gradsuite"));
  Tensor t(r, c);
  for (auto& v : t.data()) v = scale * rng.normal();
  return t;
}

inline std::vector<CellIndex> suite_flower() {
  std::vector<CellIndex> cells{{0, 0, "R0"}};
  for (const auto& n : neighbors(cells[0])) cells.push_back(n);
  return cells;
}

}  // namespace detail

inline std::vector<GradCheckRow> layer_gradcheck_suite(std::uint64_t seed = 7) {
  using detail::suite_tensor;
  std::vector<GradCheckRow> rows;
  auto record = [&](const std::string& op, double err) { rows.push_back({op, err, err < kGradTolerance}); };

  {
    const Tensor R = suite_tensor(3, 5, seed + 1);
    record("matmul", grad_check([&](Graph&, std::span<const Var> x) { return sum(mul(matmul(x[0], x[1]), x[2])); },
                                {suite_tensor(3, 4, seed), suite_tensor(4, 5, seed + 2), R}));
  }
  {
    Tensor bias(4, 4);
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 4; ++j)
        if ((i + 2 * j) % 3 == 1 && i != j) bias(i, j) = kMaskedLogit;
    const Tensor R = suite_tensor(4, 4, seed + 3);
    record("masked_softmax", grad_check(
                                 [&](Graph& g, std::span<const Var> x) {
                                   return sum(mul(masked_softmax(x[0], bias), g.constant(R)));
                                 },
                                 {suite_tensor(4, 4, seed + 4)}));
  }
  {
    const Tensor R = suite_tensor(3, 6, seed + 5);
    record("layernorm",
           grad_check([&](Graph& g, std::span<const Var> x) { return sum(mul(layernorm(x[0], x[1], x[2]), g.constant(R))); },
                      {suite_tensor(3, 6, seed + 6), suite_tensor(1, 6, seed + 7), suite_tensor(1, 6, seed + 8)}));
  }

  EncoderConfig ec;
  ec.d = 4;
  ec.T = 2;
  ec.P = 4;
  ec.tile_px = 8;
  ec.n_layers = 1;
  ec.n_heads = 2;
  {
    ParamStore s;
    add_encoder_params(s, ec, seed + 10);
    const Tensor inputs = suite_tensor(2, EncoderConfig::numeric_input_width(), seed + 11);
    std::vector<std::int64_t> starts{1'690'000'000, 1'690'003'600};
    const Tensor te = time_embedding(starts, ec);
    const Tensor R = suite_tensor(2 * ec.T, ec.d, seed + 12);
    record("numeric_encoder", grad_check_params(
                                  [&](Graph& g, const ParamStore& p) {
                                    return sum(mul(encode_numeric_rows(g, p, ec, inputs, te), g.constant(R)));
                                  },
                                  s));
    CounterRng rng(seed + 13, 5);
    Tensor tile(ec.tile_px, ec.tile_px);
    for (auto& v : tile.data()) v = rng.uniform();
    const Tensor patches = patchify(tile, ec);
    const Tensor Rv = suite_tensor(ec.P, ec.d, seed + 14);
    record("visual_encoder", grad_check_params(
                                 [&](Graph& g, const ParamStore& p) {
                                   return sum(mul(encode_visual_rows(g, p, ec, patches), g.constant(Rv)));
                                 },
                                 s));
  }

  FusionConfig fc;
  fc.d_h = 4;
  fc.layers = 1;
  {
    ParamStore s;
    add_cross_attn_params(s, "x", 4, fc.d_h, seed + 20);
    const Tensor R = suite_tensor(4, 4, seed + 21);
    const Segments seg{{0, 4}, {0, 3}};
    auto f = [&](Graph& g, const ParamStore& p, Var q, Var kv) {
      return sum(mul(cross_attend(g, p, "x", q, kv, seg), g.constant(R)));
    };
    const Tensor q = suite_tensor(4, 4, seed + 22), kv = suite_tensor(3, 4, seed + 23);
    const double ep = grad_check_params([&](Graph& g, const ParamStore& p) { return f(g, p, g.constant(q), g.constant(kv)); }, s);
    const double ei = grad_check([&](Graph& g, std::span<const Var> x) { return f(g, s, x[0], x[1]); }, {q, kv});
    record("cross_attend", std::max(ep, ei));
  }
  {
    ParamStore s;
    add_fusion_params(s, 4, fc, seed + 30);
    const Tensor R = suite_tensor(1, 8, seed + 31);
    auto f = [&](Graph& g, const ParamStore& p, Var num, Var vis) {
      auto out = fuse(g, p, fc, {num, Modality::numeric, 1}, {vis, Modality::visual, 1});
      return sum(mul(concat_cols({out.x_num, out.x_vis}), g.constant(R)));
    };
    const Tensor num = suite_tensor(4, 4, seed + 32), vis = suite_tensor(3, 4, seed + 33);
    const double ep = grad_check_params([&](Graph& g, const ParamStore& p) { return f(g, p, g.constant(num), g.constant(vis)); }, s);
    const double ei = grad_check([&](Graph& g, std::span<const Var> x) { return f(g, s, x[0], x[1]); }, {num, vis});
    record("fuse", std::max(ep, ei));
  }

  const auto topo = build_topology(detail::suite_flower());
  const std::size_t d = 3;
  {
    ParamStore s;
    add_gat_params(s, d, seed + 40);
    const Tensor bias = gat_mask_bias(topo);
    const Tensor x = suite_tensor(7, 2 * d, seed + 41), R = suite_tensor(7, d, seed + 42);
    auto f = [&](Graph& g, const ParamStore& p, Var in) { return sum(mul(gat_forward(g, p, in, bias), g.constant(R))); };
    const double ep = grad_check_params([&](Graph& g, const ParamStore& p) { return f(g, p, g.constant(x)); }, s);
    const double ei = grad_check([&](Graph& g, std::span<const Var> in) { return f(g, s, in[0]); }, {x});
    record("gat_forward", std::max(ep, ei));
  }
  {
    ParamStore s;
    const SparseConfig sc;
    add_sparse_params(s, d, sc, seed + 50);
    s.mutable_value("sparse.global") = suite_tensor(sc.globals, d, seed + 51);
    const auto mask = build_mask(topo, sc.globals);
    const Tensor x = suite_tensor(7, d, seed + 52), R = suite_tensor(7, d, seed + 53);
    auto f = [&](Graph& g, const ParamStore& p, Var in) {
      return sum(mul(sparse_attention(g, p, in, mask, sc.blocks), g.constant(R)));
    };
    const double ep = grad_check_params([&](Graph& g, const ParamStore& p) { return f(g, p, g.constant(x)); }, s);
    const double ei = grad_check([&](Graph& g, std::span<const Var> in) { return f(g, s, in[0]); }, {x});
    record("sparse_attention", std::max(ep, ei));
  }
  {
    ParamStore s;
    HeadConfig hc;
    hc.hidden = 5;
    add_head_params(s, 4, hc, seed + 60);
    const Tensor z = suite_tensor(6, 4, seed + 61);
    const Tensor R = suite_tensor(6, 1, seed + 62);
    auto f = [&](Graph& g, const ParamStore& p, Var in) {
      return sum(mul(head_forward(g, p, in, hc.dropout, {seed, 3}, true), g.constant(R)));
    };
    const double ep = grad_check_params([&](Graph& g, const ParamStore& p) { return f(g, p, g.constant(z)); }, s);
    const double ei = grad_check([&](Graph& g, std::span<const Var> in) { return f(g, s, in[0]); }, {z});
    record("mlp_head", std::max(ep, ei));
  }
  {
    const std::vector<double> y{1, 0, 0, 1, 0};
    Tensor p(5, 1);
    CounterRng rng(seed + 70, 1);
    for (auto& v : p.data()) v = rng.uniform(0.05, 0.95);
    record("weighted_bce",
           grad_check([&](Graph&, std::span<const Var> x) { return weighted_bce_mean(x[0], y, 0.6, 3.0); }, {p}));
  }
  return rows;
}

inline std::string gradcheck_table(const std::vector<GradCheckRow>& rows) {
  std::string out;
  char buf[128];
  std::snprintf(buf, sizeof buf, "%-18s %14s %s\n", "op", "max_rel_error", "status");
  out += buf;
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%-18s %14.3e %s\n", r.op.c_str(), r.max_rel_error, r.pass ? "ok" : "FAIL");
    out += buf;
  }
  return out;
}

}  // namespace alcofm
