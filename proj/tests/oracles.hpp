#pragma once

// Brute-force reference implementations and fixtures shared by the unit
// tests and the acceptance run.

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "alcofm/pipeline.hpp"
#include "alcofm/spatial.hpp"
#include "test_util.hpp"

namespace testutil {

using namespace alcofm;

inline RawRecord rec(CellIndex c, std::int64_t ts, int sev, std::map<std::string, std::optional<double>> f = {}) {
  return RawRecord{std::move(c), ts, sev, std::move(f)};
}

inline std::map<std::string, std::optional<double>> full_record(double v) {
  std::map<std::string, std::optional<double>> f;
  for (const auto& n : record_feature_names()) f[n] = v;
  return f;
}

// Brute-force kNN fill: scan every complete row, sort by (distance, row).
inline std::vector<std::vector<double>> knn_oracle(std::vector<std::vector<double>> rows, const FeatureStats& st,
                                            std::size_t k) {
  const auto orig = rows;
  std::vector<std::size_t> donors;
  for (std::size_t i = 0; i < orig.size(); ++i) {
    bool ok = true;
    for (double v : orig[i]) ok = ok && !std::isnan(v);
    if (ok) donors.push_back(i);
  }
  for (std::size_t i = 0; i < orig.size(); ++i) {
    std::vector<std::tuple<double, std::size_t>> d;
    for (auto j : donors) {
      double s = 0;
      for (std::size_t c = 0; c < orig[i].size(); ++c) {
        if (std::isnan(orig[i][c])) continue;
        const double sd = st.std[c] > 0 ? st.std[c] : 1.0;
        const double diff = orig[i][c] / sd - orig[j][c] / sd;
        s += diff * diff;
      }
      d.emplace_back(s, j);
    }
    std::sort(d.begin(), d.end());
    for (std::size_t c = 0; c < orig[i].size(); ++c) {
      if (!std::isnan(orig[i][c])) continue;
      if (d.empty()) {
        rows[i][c] = st.mean[c];
        continue;
      }
      const std::size_t kk = std::min(k, d.size());
      double s = 0;
      for (std::size_t m = 0; m < kk; ++m) s += orig[std::get<1>(d[m])][c];
      rows[i][c] = s / static_cast<double>(kk);
    }
  }
  return rows;
}

inline ImputeReport run_knn(std::vector<std::vector<double>>& rows, const FeatureStats& st, std::size_t k) {
  std::vector<std::vector<double>*> ptrs;
  for (auto& r : rows) ptrs.push_back(&r);
  return knn_impute_rows(ptrs, st, k);
}

inline FeatureStats unit_stats(std::size_t d) { return {std::vector<double>(d, 0.0), std::vector<double>(d, 1.0)}; }


// Complete dataset whose record features are correlated through a shared
// latent per window, so nearest neighbors in feature space are informative.
inline Dataset correlated_dataset(std::uint64_t seed) {
  const std::int64_t t0 = utc_seconds(2022, 1, 3);
  std::vector<RawRecord> recs;
  CounterRng rng(seed, 3);
  for (int q = 0; q < 4; ++q)
    for (int h = 0; h < 60; ++h) {
      const double z = std::sin(0.3 * h + q) + 0.1 * rng.normal();
      std::map<std::string, std::optional<double>> f;
      double k = 1.0;
      for (const auto& n : record_feature_names()) {
        f[n] = 10.0 * k * z + 0.05 * rng.normal();
        k += 0.5;
      }
      recs.push_back(rec({q, 0, "x"}, t0 + h * 3600, 0, f));
    }
  Dataset ds = build_windows(recs, {t0, t0 + 60 * 3600});
  ds.stats = compute_stats(ds, train_slots(ds.hours));
  return ds;
}


inline std::vector<CellIndex> flower(int q = 0, int r = 0, const std::string& region = "R") {
  std::vector<CellIndex> cells{{q, r, region}};
  for (auto [dq, dr] : kHexDirections) cells.push_back({q + dq, r + dr, region});
  return cells;
}

inline bool lattice_adjacent(const CellIndex& a, const CellIndex& b) {
  return a.region_id == b.region_id && hex_distance(a, b) == 1;
}

// Per-node loop: logits over self + lattice neighbors, softmax, weighted sum, ReLU.
inline Tensor gat_loop(const std::vector<CellIndex>& cells_in_order, const Tensor& x, const Tensor& W, const Tensor& a,
                double slope = 0.2) {
  const Tensor H = naive_matmul(x, W);
  const std::size_t n = H.rows(), d = H.cols();
  Tensor out(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::size_t> nb;
    for (std::size_t j = 0; j < n; ++j)
      if (j == i || lattice_adjacent(cells_in_order[i], cells_in_order[j])) nb.push_back(j);
    std::vector<double> e;
    for (auto j : nb) {
      double s = 0;
      for (std::size_t k = 0; k < d; ++k) s += a(k, 0) * H(i, k) + a(d + k, 0) * H(j, k);
      e.push_back(s > 0 ? s : slope * s);
    }
    const auto alpha = testutil::softmax(e);
    for (std::size_t k = 0; k < d; ++k) {
      double acc = 0;
      for (std::size_t t = 0; t < nb.size(); ++t) acc += alpha[t] * H(nb[t], k);
      out(i, k) = std::max(acc, 0.0);
    }
  }
  return out;
}

inline Tensor run_gat(const ParamStore& s, const GridTopology& topo, const Tensor& x, Tensor* alpha = nullptr) {
  Graph g(false);
  return gat_forward(g, s, g.constant(x), gat_mask_bias(topo), {}, alpha).value();
}

// Dense attention blocks over [Z; globals] with -1e30 written into disallowed logits.
inline Tensor sparse_dense_oracle(const ParamStore& s, const Tensor& Z, const std::vector<std::vector<bool>>& allow,
                           std::size_t G, std::size_t blocks) {
  const std::size_t n = Z.rows(), d = Z.cols(), m = n + G;
  Tensor h(m, d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) h(i, j) = Z(i, j);
  for (std::size_t i = 0; i < G; ++i)
    for (std::size_t j = 0; j < d; ++j) h(n + i, j) = s.value("sparse.global")(i, j);
  for (std::size_t b = 0; b < blocks; ++b) {
    const auto p = sparse_prefix(b);
    const Tensor Q = naive_matmul(h, s.value(p + ".q.W"));
    const Tensor K = naive_matmul(h, s.value(p + ".k.W"));
    const Tensor V = naive_matmul(h, s.value(p + ".v.W"));
    Tensor A(m, d);
    for (std::size_t i = 0; i < m; ++i) {
      std::vector<double> z(m);
      for (std::size_t j = 0; j < m; ++j) {
        double dot = 0;
        for (std::size_t k = 0; k < d; ++k) dot += Q(i, k) * K(j, k);
        z[j] = allow[i][j] ? dot / std::sqrt(static_cast<double>(d)) : -1e30;
      }
      const auto pr = testutil::softmax(z);
      for (std::size_t k = 0; k < d; ++k) {
        double acc = 0;
        for (std::size_t j = 0; j < m; ++j) acc += pr[j] * V(j, k);
        A(i, k) = acc;
      }
    }
    const Tensor O = naive_matmul(A, s.value(p + ".o.W"));
    for (std::size_t k = 0; k < h.size(); ++k) h[k] += O[k];
    h = naive_layernorm(h);
  }
  Tensor out(n, d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) out(i, j) = h(i, j);
  return out;
}

inline ParamStore sparse_params(std::size_t d, std::size_t G, std::size_t blocks, std::uint64_t seed) {
  ParamStore s;
  add_sparse_params(s, d, {G, blocks}, seed);
  if (G > 0) s.mutable_value("sparse.global") = random_tensor(G, d, seed + 1);  // nonzero globals
  return s;
}

inline Tensor run_sparse(const ParamStore& s, const GridTopology& topo, const Tensor& Z, std::size_t G, std::size_t blocks) {
  Graph g(false);
  return sparse_attention(g, s, g.constant(Z), build_mask(topo, G), blocks).value();
}

inline std::vector<std::vector<bool>> allow_from_cells(const std::vector<CellIndex>& cells, std::size_t G, bool all = false) {
  const std::size_t n = cells.size(), m = n + G;
  std::vector<std::vector<bool>> a(m, std::vector<bool>(m, false));
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j)
      a[i][j] = all || i == j || i >= n || j >= n || lattice_adjacent(cells[i], cells[j]);
  return a;
}

// Random region of n cells drawn from a 4x4 patch, plus a second region sometimes.
inline std::vector<CellIndex> random_cells(std::size_t n, CounterRng& rng) {
  auto pool = hex_patch(0, 0, 4, 4, "A");
  for (std::size_t i = pool.size(); i > 1; --i) std::swap(pool[i - 1], pool[static_cast<std::size_t>(rng.uniform() * i)]);
  pool.resize(n);
  if (rng.uniform() < 0.3) pool.back().region_id = "B";
  return pool;
}


}  // namespace testutil
