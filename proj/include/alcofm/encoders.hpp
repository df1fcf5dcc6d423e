#pragma once

// Per-hour token encoders, the volatility pre-score and the look-back gate.
//
// Numeric: [z-scored features | temporal one-hots] -> linear -> T tokens of
// width d, plus a sinusoidal embedding of each token's continuous time, then
// self-attention blocks within the hour.
// Visual: P non-overlapping patches -> linear -> one soft-split stage
// (3x3 neighborhood average over the patch grid, re-projection) ->
// positional embedding -> self-attention blocks.

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "alcofm/layers.hpp"
#include "alcofm/pipeline.hpp"

namespace alcofm {

struct EncoderConfig {
  std::size_t d = 32;
  std::size_t T = 4;
  std::size_t P = 16;
  std::size_t tile_px = 32;
  std::size_t n_layers = 2;
  std::size_t n_heads = 2;
  bool time_embedding = true;
  bool pos_embedding = true;

  std::size_t grid_side() const { return static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(P)))); }
  std::size_t patch_side() const { return tile_px / grid_side(); }
  static constexpr std::size_t numeric_input_width() { return kFeatureCount + kTemporalOneHotWidth; }

  void validate() const {
    if (d == 0 || T == 0 || P == 0 || n_heads == 0) throw ValidationError("encoder sizes must be positive");
    if (d % n_heads != 0) throw ValidationError("d must be divisible by n_heads");
    if (d % 2 != 0) throw ValidationError("d must be even for the time embedding");
    if (grid_side() * grid_side() != P) throw ValidationError("P must be a perfect square");
    if (tile_px == 0 || tile_px % grid_side() != 0) throw ShapeError("tile side not divisible by the patch grid");
  }
};

enum class Modality { numeric, visual };

struct TokenSeq {
  Var tokens;
  Modality modality = Modality::numeric;
  std::size_t hours_covered = 1;
};

inline void add_encoder_params(ParamStore& s, const EncoderConfig& c, std::uint64_t seed) {
  c.validate();
  add_linear(s, "enc.num.in", EncoderConfig::numeric_input_width(), c.T * c.d, seed);
  for (std::size_t l = 0; l < c.n_layers; ++l) add_transformer_block(s, "enc.num.blk" + std::to_string(l), c.d, seed);
  const std::size_t s2 = c.patch_side() * c.patch_side();
  add_linear(s, "enc.vis.patch", s2, c.d, seed, true, 4.0);
  add_linear(s, "enc.vis.ss", c.d, c.d, seed);
  s.add("enc.vis.pos", init_normal(c.P, c.d, 0.5 * std::sqrt(static_cast<double>(c.P)), seed, "enc.vis.pos"));
  for (std::size_t l = 0; l < c.n_layers; ++l) add_transformer_block(s, "enc.vis.blk" + std::to_string(l), c.d, seed);
}

// ---------------------------------------------------------------------------
// Numeric encoder

/// One row per window: z-scored features followed by the temporal one-hots.
inline Tensor numeric_inputs(std::span<const AtomicWindow* const> windows, const FeatureStats& st) {
  if (windows.empty()) throw ValidationError("no windows to encode");
  Tensor x(windows.size(), EncoderConfig::numeric_input_width());
  for (std::size_t i = 0; i < windows.size(); ++i) {
    const auto& w = *windows[i];
    if (w.features.size() != kFeatureCount) throw ShapeError("window feature vector must hold 21 entries");
    for (std::size_t j = 0; j < kFeatureCount; ++j) {
      const double v = w.features[j];
      if (std::isnan(v)) throw ValidationError("encode_numeric requires imputed (complete) windows");
      const double sd = st.std.at(j) > 0.0 ? st.std[j] : 1.0;
      x(i, j) = (v - st.mean.at(j)) / sd;
    }
    const auto oh = temporal_one_hot(w.temporal);
    std::copy(oh.begin(), oh.end(), x.row(i).begin() + kFeatureCount);
  }
  return x;
}

/// Sinusoidal embedding of each window's start, repeated over its T tokens.
/// Periods run geometrically from 2 hours to one week: every phase recurs
/// many times inside a training span, so held-out hours never extrapolate.
/// Month and season reach the model through the calendar features instead.
inline Tensor time_embedding(std::span<const std::int64_t> window_starts, const EncoderConfig& c) {
  Tensor e(window_starts.size() * c.T, c.d);
  if (!c.time_embedding) return e;
  const std::size_t half = c.d / 2;
  for (std::size_t h = 0; h < window_starts.size(); ++h)
    for (std::size_t k = 0; k < c.T; ++k) {
      const double hours = static_cast<double>(window_starts[h]) / 3600.0;
      for (std::size_t i = 0; i < half; ++i) {
        const double frac = half > 1 ? static_cast<double>(i) / static_cast<double>(half - 1) : 0.0;
        const double period = 2.0 * std::pow(168.0 / 2.0, frac);
        const double a = 2.0 * M_PI * std::fmod(hours / period, 1.0);
        e(h * c.T + k, 2 * i) = std::sin(a);
        e(h * c.T + k, 2 * i + 1) = std::cos(a);
      }
    }
  return e;
}

/// Encodes H independent hours: inputs H x 41, time embedding (H*T) x d.
/// Returns (H*T) x d tokens, hour-major.
inline Var encode_numeric_rows(Graph& g, const ParamStore& s, const EncoderConfig& c, const Tensor& inputs,
                               const Tensor& time_emb) {
  const std::size_t H = inputs.rows();
  Var x = reshape(linear(g, s, "enc.num.in", g.constant(inputs)), H * c.T, c.d);
  if (c.time_embedding) x = add(x, g.constant(time_emb));
  const Segments seg = Segments::uniform(H, c.T, c.T);
  for (std::size_t l = 0; l < c.n_layers; ++l) x = transformer_block(g, s, "enc.num.blk" + std::to_string(l), x, seg, c.n_heads);
  return x;
}

inline TokenSeq encode_numeric(Graph& g, const ParamStore& s, const EncoderConfig& c,
                               std::span<const AtomicWindow> windows, const FeatureStats& st) {
  std::vector<const AtomicWindow*> ptrs;
  std::vector<std::int64_t> starts;
  for (const auto& w : windows) {
    ptrs.push_back(&w);
    starts.push_back(w.window_start);
  }
  return {encode_numeric_rows(g, s, c, numeric_inputs(ptrs, st), time_embedding(starts, c)), Modality::numeric,
          windows.size()};
}

// ---------------------------------------------------------------------------
// Visual encoder

/// P x s^2 patch matrix; patches in row-major grid order, pixels row-major.
inline Tensor patchify(const Tensor& tile, const EncoderConfig& c) {
  c.validate();
  if (tile.rows() != c.tile_px || tile.cols() != c.tile_px) throw ShapeError("tile is not tile_px x tile_px");
  for (double v : tile.data())
    if (!(v >= 0.0 && v <= 1.0)) throw ValidationError("tile values must lie in [0, 1]");
  const std::size_t gs = c.grid_side(), ps = c.patch_side();
  Tensor out(c.P, ps * ps);
  for (std::size_t a = 0; a < gs; ++a)
    for (std::size_t b = 0; b < gs; ++b)
      for (std::size_t i = 0; i < ps; ++i)
        for (std::size_t j = 0; j < ps; ++j) out(a * gs + b, i * ps + j) = tile(a * ps + i, b * ps + j);
  return out;
}

/// P x P averaging operator over each patch's 3x3 grid neighborhood (clipped at borders).
inline Tensor soft_split_operator(std::size_t grid_side) {
  const std::size_t P = grid_side * grid_side;
  Tensor op(P, P);
  const auto gs = static_cast<long>(grid_side);
  for (long a = 0; a < gs; ++a)
    for (long b = 0; b < gs; ++b) {
      std::vector<std::size_t> nb;
      for (long da = -1; da <= 1; ++da)
        for (long db = -1; db <= 1; ++db)
          if (a + da >= 0 && a + da < gs && b + db >= 0 && b + db < gs)
            nb.push_back(static_cast<std::size_t>((a + da) * gs + b + db));
      for (auto j : nb) op(static_cast<std::size_t>(a * gs + b), j) = 1.0 / static_cast<double>(nb.size());
    }
  return op;
}

/// Patch tokens before positional embedding and attention: (M*P) x d for M tiles.
inline Var visual_patch_tokens(Graph& g, const ParamStore& s, const EncoderConfig& c, const Tensor& patches) {
  Var x = linear(g, s, "enc.vis.patch", g.constant(patches));
  x = blockwise_left_mul(soft_split_operator(c.grid_side()), x);
  return linear(g, s, "enc.vis.ss", x);
}

/// Encodes M tiles given as stacked patch matrices ((M*P) x s^2).
inline Var encode_visual_rows(Graph& g, const ParamStore& s, const EncoderConfig& c, const Tensor& patches) {
  if (patches.rows() % c.P != 0) throw ShapeError("patch rows must be a multiple of P");
  const std::size_t M = patches.rows() / c.P;
  Var x = visual_patch_tokens(g, s, c, patches);
  if (c.pos_embedding) {
    std::vector<std::size_t> idx(M * c.P);
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i % c.P;
    x = add(x, gather_rows(g.param(s, "enc.vis.pos"), std::move(idx)));
  }
  const Segments seg = Segments::uniform(M, c.P, c.P);
  for (std::size_t l = 0; l < c.n_layers; ++l) x = transformer_block(g, s, "enc.vis.blk" + std::to_string(l), x, seg, c.n_heads);
  return x;
}

inline TokenSeq encode_visual(Graph& g, const ParamStore& s, const EncoderConfig& c, const Tensor& tile) {
  return {encode_visual_rows(g, s, c, patchify(tile, c)), Modality::visual, 1};
}

// ---------------------------------------------------------------------------
// Volatility and gating

/// Mean over columns of the population standard deviation down the rows.
inline double token_spread(const Tensor& x) {
  const std::size_t n = x.rows(), d = x.cols();
  double total = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    double m = 0.0;
    for (std::size_t i = 0; i < n; ++i) m += x(i, j);
    m /= static_cast<double>(n);
    double v = 0.0;
    for (std::size_t i = 0; i < n; ++i) v += (x(i, j) - m) * (x(i, j) - m);
    total += std::sqrt(v / static_cast<double>(n));
  }
  return total / static_cast<double>(d);
}

/// u = (sigma_num + sigma_vis) / 2 over one hour's numeric and visual tokens.
inline double volatility(const Tensor& x_num, const Tensor& x_vis) {
  return 0.5 * (token_spread(x_num) + token_spread(x_vis));
}

struct GateThresholds {
  double tau_low = 0.0;
  double tau_high = 0.0;
};

/// Nearest-rank percentile: sorted[ceil(pct * n / 100)] (1-indexed), clamped to [1, n].
inline double nearest_rank(std::vector<double> sorted_or_not, int pct) {
  if (sorted_or_not.empty()) throw ValidationError("percentile of an empty list");
  std::sort(sorted_or_not.begin(), sorted_or_not.end());
  const auto n = static_cast<long>(sorted_or_not.size());
  long rank = (static_cast<long>(pct) * n + 99) / 100;
  rank = std::clamp(rank, 1L, n);
  return sorted_or_not[static_cast<std::size_t>(rank - 1)];
}

inline GateThresholds fit_thresholds(const std::vector<double>& u, int low_pct = 33, int high_pct = 67) {
  if (u.empty()) throw ValidationError("fit_thresholds needs at least one value");
  if (low_pct < 0 || high_pct > 100 || low_pct > high_pct) throw ValidationError("percentiles out of order");
  return {nearest_rank(u, low_pct), nearest_rank(u, high_pct)};
}

/// 6 above tau_high, 1 below tau_low, 3 in between (both boundaries inclusive).
inline int select_window(double u, const GateThresholds& t) {
  if (u > t.tau_high) return 6;
  if (u < t.tau_low) return 1;
  return 3;
}

}  // namespace alcofm
