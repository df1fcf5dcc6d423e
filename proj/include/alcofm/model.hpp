#pragma once

// The assembled risk model: per-hour encoders -> (gated) look-back window ->
// fusion -> region graph layers -> head. Six cumulative ablation variants
// switch components on in a fixed order.
//
// Batches are "times x all nodes": sample (ti, n) sits at row ti * N + n, and
// since node order sorts by region first, each (time, region) graph is a
// contiguous row block.

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "alcofm/encoders.hpp"
#include "alcofm/fusion.hpp"
#include "alcofm/headcalib.hpp"
#include "alcofm/pipeline.hpp"
#include "alcofm/spatial.hpp"

namespace alcofm {

enum class Variant { Baseline, PlusLocalGAT, PlusFusion, PlusSparseGlobal, PlusMCDropout, PlusAdaptiveGating };

inline constexpr std::array<Variant, 6> kAllVariants{Variant::Baseline,         Variant::PlusLocalGAT,
                                                     Variant::PlusFusion,       Variant::PlusSparseGlobal,
                                                     Variant::PlusMCDropout,    Variant::PlusAdaptiveGating};

struct VariantFlags {
  bool gat = false;
  bool fusion = false;
  bool sparse = false;
  bool mc = false;
  bool gating = false;
};

inline VariantFlags flags_of(Variant v) {
  const int k = static_cast<int>(v);
  return {k >= 1, k >= 2, k >= 3, k >= 4, k >= 5};
}

inline std::string variant_key(Variant v) {
  static const char* names[] = {"baseline", "local_gat", "fusion", "sparse_global", "mc_dropout", "adaptive_gating"};
  return names[static_cast<int>(v)];
}

inline std::string variant_label(Variant v) {
  static const char* names[] = {"Baseline", "+LocalGAT", "+Fusion", "+SparseGlobal", "+MCDropout", "+AdaptiveGating"};
  return names[static_cast<int>(v)];
}

inline Variant parse_variant(const std::string& s) {
  for (auto v : kAllVariants)
    if (s == variant_key(v) || s == variant_label(v)) return v;
  if (s == "full") return Variant::PlusAdaptiveGating;
  throw ValidationError("unknown variant '" + s + "'");
}

struct ModelConfig {
  EncoderConfig enc;
  FusionConfig fusion;
  GatConfig gat;
  SparseConfig sparse;
  HeadConfig head;
  std::size_t fixed_window = 3;
  std::size_t mc_passes = 10;
  int gate_low_pct = 33;
  int gate_high_pct = 67;
};

inline constexpr std::array<std::size_t, 3> kWindowChoices{1, 3, 6};
inline constexpr std::size_t kMaxWindow = 6;

struct Model {
  ModelConfig cfg;
  Variant variant = Variant::Baseline;
  ParamStore params;
  GateThresholds gate;

  VariantFlags flags() const { return flags_of(variant); }
};

inline Model make_model(const ModelConfig& cfg, Variant v, std::uint64_t seed) {
  Model m;
  m.cfg = cfg;
  m.variant = v;
  const auto f = m.flags();
  const std::size_t d = cfg.enc.d;
  add_encoder_params(m.params, cfg.enc, seed);
  if (f.fusion) add_fusion_params(m.params, d, cfg.fusion, seed);
  if (f.gat) add_gat_params(m.params, d, seed);
  else add_linear(m.params, "proj", 2 * d, d, seed);
  if (f.sparse) add_sparse_params(m.params, d, cfg.sparse, seed);
  add_head_params(m.params, d, cfg.head, seed);
  return m;
}

/// Parameters updated by the transfer protocol.
inline std::vector<std::string> finetune_prefixes() { return {"gat.", "head."}; }

// ---------------------------------------------------------------------------
// Dataset-derived inputs, prepared once.

struct RegionGraph {
  std::size_t begin = 0;  // first node (global index)
  std::size_t size = 0;
  Tensor gat_bias;
  SparseMask mask;
};

struct ModelInputs {
  std::vector<CellIndex> nodes;
  std::size_t hours = 0;
  Tensor numeric;   // (N * H) x 41, row n * H + t
  Tensor time_emb;  // (H * T) x d
  Tensor patches;   // (N * P) x s^2
  std::vector<RegionGraph> regions;
  std::vector<std::size_t> region_of;  // node -> index into regions
  std::vector<int> labels;             // N * H, row n * H + t

  std::size_t node_count() const { return nodes.size(); }
  int label(std::size_t n, std::size_t t) const { return labels[n * hours + t]; }
};

/// `tiles` maps each cell to its tile_px x tile_px image.
inline ModelInputs prepare_inputs(const Dataset& ds, const std::map<CellIndex, Tensor>& tiles, const ModelConfig& cfg) {
  cfg.enc.validate();
  ModelInputs in;
  in.nodes = ds.topology.cells();
  in.hours = ds.hours;
  const std::size_t N = in.nodes.size(), H = ds.hours;
  if (N == 0 || H == 0) throw ValidationError("empty dataset");

  std::vector<const AtomicWindow*> ptrs;
  ptrs.reserve(N * H);
  for (const auto& c : in.nodes) {
    const auto& s = ds.windows(c);
    if (s.size() != H) throw ValidationError("every cell needs one window per hour");
    for (const auto& w : s) {
      ptrs.push_back(&w);
      in.labels.push_back(w.y);
    }
  }
  in.numeric = numeric_inputs(ptrs, ds.stats);

  std::vector<std::int64_t> starts(H);
  for (std::size_t t = 0; t < H; ++t) starts[t] = ds.start + static_cast<std::int64_t>(t) * ds.window_seconds;
  in.time_emb = time_embedding(starts, cfg.enc);

  const std::size_t s2 = cfg.enc.patch_side() * cfg.enc.patch_side();
  in.patches = Tensor(N * cfg.enc.P, s2);
  for (std::size_t n = 0; n < N; ++n) {
    auto it = tiles.find(in.nodes[n]);
    if (it == tiles.end()) throw ValidationError("missing tile for cell " + in.nodes[n].to_string());
    const Tensor p = patchify(it->second, cfg.enc);
    std::copy(p.data().begin(), p.data().end(), in.patches.data().begin() + static_cast<std::ptrdiff_t>(n * cfg.enc.P * s2));
  }

  in.region_of.resize(N);
  for (std::size_t n = 0; n < N;) {
    std::size_t e = n;
    std::vector<CellIndex> cells;
    while (e < N && in.nodes[e].region_id == in.nodes[n].region_id) cells.push_back(in.nodes[e++]);
    const auto topo = build_topology(cells);
    RegionGraph rg{n, e - n, gat_mask_bias(topo), build_mask(topo, cfg.sparse.globals)};
    for (std::size_t k = n; k < e; ++k) in.region_of[k] = in.regions.size();
    in.regions.push_back(std::move(rg));
    n = e;
  }
  return in;
}

// ---------------------------------------------------------------------------
// Forward pass

/// Visual tokens of every node's (static) tile: (N * P) x d.
inline Var encode_all_tiles(Graph& g, const Model& m, const ModelInputs& in) {
  return encode_visual_rows(g, m.params, m.cfg.enc, in.patches);
}

struct FusedRows {
  Var x_num;  // S x d
  Var x_vis;  // S x d
};

/// Fused per-sample embeddings for samples (times[ti], n), with look-back
/// windows[ti * N + n]. `vis_all` is encode_all_tiles' output on the same graph.
inline FusedRows fused_embeddings(Graph& g, const Model& m, const ModelInputs& in, const std::vector<std::size_t>& times,
                                  const std::vector<std::size_t>& windows, Var vis_all) {
  const auto& c = m.cfg.enc;
  const std::size_t N = in.node_count(), H = in.hours, S = times.size() * N;
  if (windows.size() != S) throw ShapeError("one window length per sample required");
  std::size_t total_hours = 0;
  for (auto w : windows) total_hours += w;

  Tensor x(total_hours, EncoderConfig::numeric_input_width());
  Tensor te(total_hours * c.T, c.d);
  std::vector<std::size_t> num_off{0}, vis_off{0}, vis_idx;
  vis_idx.reserve(S * c.P);
  std::size_t row = 0;
  const std::size_t width = x.cols();
  for (std::size_t ti = 0; ti < times.size(); ++ti) {
    const std::size_t t = times[ti];
    for (std::size_t n = 0; n < N; ++n) {
      const std::size_t w = windows[ti * N + n];
      if (w == 0 || w > t + 1) throw ValidationError("look-back window reaches before the first hour");
      for (std::size_t h = t + 1 - w; h <= t; ++h, ++row) {
        std::copy_n(in.numeric.data().begin() + static_cast<std::ptrdiff_t>((n * H + h) * width), width,
                    x.data().begin() + static_cast<std::ptrdiff_t>(row * width));
        std::copy_n(in.time_emb.data().begin() + static_cast<std::ptrdiff_t>(h * c.T * c.d), c.T * c.d,
                    te.data().begin() + static_cast<std::ptrdiff_t>(row * c.T * c.d));
      }
      num_off.push_back(row * c.T);
      for (std::size_t p = 0; p < c.P; ++p) vis_idx.push_back(n * c.P + p);
      vis_off.push_back(vis_idx.size());
    }
  }
  Var num = encode_numeric_rows(g, m.params, c, x, te);
  // Tiles are static, so one copy of a node's visual tokens stands in for the
  // w identical per-hour copies (fusion output is unchanged by duplicates).
  Var vis = gather_rows(vis_all, std::move(vis_idx));
  const auto f = m.flags();
  FusedBatch fb = f.fusion ? fuse_rows(g, m.params, m.cfg.fusion, num, vis, num_off, vis_off)
                           : pool_rows(num, vis, num_off, vis_off);
  return {fb.x_num, fb.x_vis};
}

/// Graph layers over fused rows laid out as times x N. Returns S x d.
inline Var graph_embeddings(Graph& g, const Model& m, const ModelInputs& in, Var x_num, Var x_vis) {
  const auto f = m.flags();
  Var x = concat_cols({x_num, x_vis});
  if (!f.gat && !f.sparse) return linear(g, m.params, "proj", x);
  const std::size_t N = in.node_count();
  const std::size_t T = x.rows() / N;
  std::vector<Var> parts;
  parts.reserve(T * in.regions.size());
  for (std::size_t ti = 0; ti < T; ++ti)
    for (const auto& rg : in.regions) {
      Var xr = slice_rows(x, ti * N + rg.begin, rg.size);
      Var z = f.gat ? gat_forward(g, m.params, xr, rg.gat_bias, m.cfg.gat) : linear(g, m.params, "proj", xr);
      if (f.sparse) z = sparse_attention(g, m.params, z, rg.mask, m.cfg.sparse.blocks);
      parts.push_back(z);
    }
  return parts.size() == 1 ? parts.front() : concat_rows(parts);
}

inline Var embed(Graph& g, const Model& m, const ModelInputs& in, const std::vector<std::size_t>& times,
                 const std::vector<std::size_t>& windows) {
  Var vis_all = encode_all_tiles(g, m, in);
  auto fr = fused_embeddings(g, m, in, times, windows, vis_all);
  return graph_embeddings(g, m, in, fr.x_num, fr.x_vis);
}

// ---------------------------------------------------------------------------
// Volatility pre-scores

/// u for every (node, hour) in `times`, row-major times x N.
inline std::vector<double> volatility_scores(const Model& m, const ModelInputs& in, const std::vector<std::size_t>& times) {
  const auto& c = m.cfg.enc;
  const std::size_t N = in.node_count(), H = in.hours, width = EncoderConfig::numeric_input_width();
  std::vector<double> sigma_vis(N);
  {
    Graph g(false);
    const Tensor v = encode_all_tiles(g, m, in).value();
    for (std::size_t n = 0; n < N; ++n) {
      Tensor tok(c.P, c.d);
      std::copy_n(v.data().begin() + static_cast<std::ptrdiff_t>(n * c.P * c.d), c.P * c.d, tok.data().begin());
      sigma_vis[n] = token_spread(tok);
    }
  }
  std::vector<double> u(times.size() * N);
  constexpr std::size_t kChunk = 64;
  for (std::size_t t0 = 0; t0 < times.size(); t0 += kChunk) {
    const std::size_t nt = std::min(kChunk, times.size() - t0);
    Tensor x(nt * N, width), te(nt * N * c.T, c.d);
    for (std::size_t k = 0; k < nt; ++k)
      for (std::size_t n = 0; n < N; ++n) {
        const std::size_t row = k * N + n, h = times[t0 + k];
        std::copy_n(in.numeric.data().begin() + static_cast<std::ptrdiff_t>((n * H + h) * width), width,
                    x.data().begin() + static_cast<std::ptrdiff_t>(row * width));
        std::copy_n(in.time_emb.data().begin() + static_cast<std::ptrdiff_t>(h * c.T * c.d), c.T * c.d,
                    te.data().begin() + static_cast<std::ptrdiff_t>(row * c.T * c.d));
      }
    Graph g(false);
    const Tensor tok = encode_numeric_rows(g, m.params, c, x, te).value();
    Tensor one(c.T, c.d);
    for (std::size_t row = 0; row < nt * N; ++row) {
      std::copy_n(tok.data().begin() + static_cast<std::ptrdiff_t>(row * c.T * c.d), c.T * c.d, one.data().begin());
      u[t0 * N + row] = 0.5 * (token_spread(one) + sigma_vis[row % N]);
    }
  }
  return u;
}

inline std::vector<std::size_t> gate_windows(const std::vector<double>& u, const GateThresholds& t) {
  std::vector<std::size_t> w(u.size());
  for (std::size_t i = 0; i < u.size(); ++i) w[i] = static_cast<std::size_t>(select_window(u[i], t));
  return w;
}

}  // namespace alcofm
