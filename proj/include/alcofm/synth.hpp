#pragma once

// Synthetic multi-region world with planted risk structure.
//
// Per cell c in region r at hour t (all drivers are unit-variance AR(1)):
//   x1  current-hour driver (rho 0.5)        -> tmpf
//   x2  long-memory driver  (rho 0.3)        -> alti
//   x3  spillover driver    (rho 0.9)        -> dwpf
//   s_r region shock        (rho 0.95)       -> relh = s_r + 1.5 noise (per cell)
//   o_c static risk offset, drawn into the tile as intensity
// High-volatility cells draw every innovation from a unit-variance Student-t(3),
// carry hv_noise_scale times the nuisance weather noise (relh, sknt, vsby,
// p01i) and get textured tiles; the rest get Gaussian innovations, unit noise
// and flat tiles.
//
//   logit = b0 + a_cur x1(t)
//             + [hv] a_mem mean_{k<6} x2(t-k)
//             + spillover (a_spill mean_{j in N(c)} x3_j(t) + a_shock s_r(t))
//             + a_tile o_c + a_int o_c x1(t)
//   y ~ Bernoulli(sigmoid(logit)), b0 bisected to hit positive_rate.
//
// Shifted regions (the transfer target) use a different coefficient set.

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "alcofm/pipeline.hpp"

namespace alcofm {

struct SynthSpec {
  std::size_t regions = 3;
  std::size_t cols = 6;
  std::size_t rows = 6;
  std::size_t hours = 2000;
  std::size_t tile_px = 32;
  double hv_fraction = 0.3;
  double hv_noise_scale = 3.0;
  double spillover = 1.0;
  double positive_rate = 0.1;
  std::size_t shifted_regions = 0;  // trailing regions that use the shifted coefficients
  double missing_rate = 0.001;      // per record field, raw records only
  std::size_t junk_cells = 2;       // extra cells the quality filters must drop
  std::int64_t start = 1685577600;  // 2023-06-01T00:00:00Z; 2000 h stay inside one season
  std::uint64_t seed = 1;

  void validate() const {
    if (regions == 0 || cols == 0 || rows == 0) throw ValidationError("synth grid must be non-empty");
    if (hours < 2 * kMaxLag) throw ValidationError("synth needs at least 12 hours");
    if (!(positive_rate > 0.0 && positive_rate <= 0.5)) throw ValidationError("positive_rate must lie in (0, 0.5]");
    if (!(hv_fraction >= 0.0 && hv_fraction <= 1.0)) throw ValidationError("hv_fraction must lie in [0, 1]");
    if (!(hv_noise_scale > 0.0)) throw ValidationError("hv_noise_scale must be positive");
    if (spillover < 0.0) throw ValidationError("spillover must be non-negative");
    if (shifted_regions > regions) throw ValidationError("more shifted regions than regions");
    if (!(missing_rate >= 0.0 && missing_rate < 1.0)) throw ValidationError("missing_rate must lie in [0, 1)");
    if (tile_px == 0 || tile_px > 255) throw ValidationError("tile_px must lie in [1, 255]");
    if (start % 3600 != 0) throw ValidationError("start must be hour-aligned");
  }

  static constexpr std::size_t kMaxLag = 6;
};

struct PlantedCoefficients {
  double current = 1.5;
  double memory = 4.0;
  double spill = 3.5;
  double shock = 2.0;
  double tile = 0.8;
  double interaction = 0.5;
  double offset = 0.0;  // added to b0

  static PlantedCoefficients shifted() { return {0.4, 2.5, 3.5, 2.0, -0.8, -0.5, 0.5}; }
};

struct CellTruth {
  bool high_volatility = false;
  bool shifted = false;
  double tile_offset = 0.0;
};

struct SynthWorld {
  SynthSpec spec;
  Dataset dataset;                      // complete and labeled
  std::map<CellIndex, Tensor> tiles;
  std::map<CellIndex, CellTruth> truth;
  std::map<CellIndex, std::vector<double>> probability;  // planted P(y = 1) per hour
  double b0 = 0.0;
  double empirical_rate = 0.0;
};

inline std::string region_name(std::size_t r) { return "R" + std::to_string(r); }

namespace detail {

inline double student_t3_unit(CounterRng& rng) {
  // t(3) = Z / sqrt(chi2_3 / 3); variance 3, so divide by sqrt(3).
  const double z = rng.normal();
  double chi = 0.0;
  for (int k = 0; k < 3; ++k) {
    const double e = rng.normal();
    chi += e * e;
  }
  return z / std::sqrt(chi / 3.0) / std::sqrt(3.0);
}

inline std::vector<double> ar1(std::size_t n, double rho, bool heavy, CounterRng& rng) {
  std::vector<double> x(n);
  const double innov = std::sqrt(1.0 - rho * rho);
  auto draw = [&] { return heavy ? student_t3_unit(rng) : rng.normal(); };
  x[0] = draw();
  for (std::size_t t = 1; t < n; ++t) x[t] = rho * x[t - 1] + innov * draw();
  return x;
}

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

inline double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace detail

/// Tile for a cell: flat intensity for low-volatility cells, intensity plus
/// a quadrant checkerboard and pixel noise for high-volatility ones. The
/// quadrants keep patches distinct at any patch grid of 2x2 or finer.
inline Tensor synth_tile(const CellTruth& t, std::size_t side, std::uint64_t seed, const CellIndex& c) {
  const double base = 0.2 + 0.6 * detail::normal_cdf(t.tile_offset);
  Tensor tile(side, side, base);
  if (!t.high_volatility) return tile;
  CounterRng rng(seed, stream_id("tile:" + c.to_string()));
  const std::size_t half = std::max<std::size_t>(1, side / 2);
  for (std::size_t i = 0; i < side; ++i)
    for (std::size_t j = 0; j < side; ++j) {
      const double checker = ((i / half + j / half) % 2 == 0) ? 0.2 : -0.2;
      tile(i, j) = std::clamp(base + checker + 0.1 * rng.normal(), 0.0, 1.0);
    }
  return tile;
}

inline SynthWorld generate_synth(const SynthSpec& spec) {
  spec.validate();
  SynthWorld w;
  w.spec = spec;
  const std::size_t H = spec.hours;
  const auto& cal = HolidayCalendar::us_fixed_date();

  struct CellSeries {
    std::vector<double> x1, x2, x3, obs, lin;  // lin: logit without b0
  };
  std::map<CellIndex, CellSeries> series;
  std::vector<CellIndex> all_cells;

  for (std::size_t r = 0; r < spec.regions; ++r) {
    const std::string rid = region_name(r);
    const bool shifted = r >= spec.regions - spec.shifted_regions;
    const PlantedCoefficients a = shifted ? PlantedCoefficients::shifted() : PlantedCoefficients{};
    CounterRng region_rng(spec.seed, stream_id("region:" + rid));
    const auto shock = detail::ar1(H, 0.95, false, region_rng);

    const auto cells = hex_patch(0, 0, static_cast<int>(spec.cols), static_cast<int>(spec.rows), rid);
    // Exactly round(hv_fraction * n) high-volatility cells per region.
    std::vector<std::size_t> order(cells.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    shuffle_in_place(order, region_rng);
    const auto n_hv = static_cast<std::size_t>(std::lround(spec.hv_fraction * static_cast<double>(cells.size())));
    for (std::size_t k = 0; k < order.size(); ++k) {
      const auto& c = cells[order[k]];
      CounterRng rng(spec.seed, stream_id("truth:" + c.to_string()));
      w.truth[c] = {k < n_hv, shifted, rng.normal()};
    }
    for (const auto& c : cells) {
      const bool hv = w.truth[c].high_volatility;
      CounterRng rng(spec.seed, stream_id("drivers:" + c.to_string()));
      CellSeries s;
      s.x1 = detail::ar1(H, 0.5, hv, rng);
      s.x2 = detail::ar1(H, 0.3, hv, rng);
      s.x3 = detail::ar1(H, 0.9, hv, rng);
      s.obs.resize(H);
      const double noise = hv ? spec.hv_noise_scale : 1.0;
      for (std::size_t t = 0; t < H; ++t) s.obs[t] = shock[t] + 1.5 * noise * rng.normal();
      series[c] = std::move(s);
    }
    for (const auto& c : cells) {
      auto& s = series[c];
      const auto& tr = w.truth[c];
      std::vector<const CellSeries*> nb;
      for (const auto& n : neighbors(c))
        if (series.count(n) && n.region_id == rid) nb.push_back(&series[n]);
      s.lin.resize(H);
      for (std::size_t t = 0; t < H; ++t) {
        double v = a.offset + a.current * s.x1[t] + a.tile * tr.tile_offset + a.interaction * tr.tile_offset * s.x1[t];
        if (tr.high_volatility) {
          double m = 0.0;
          for (std::size_t k = 0; k < SynthSpec::kMaxLag; ++k) m += s.x2[t >= k ? t - k : 0];
          v += a.memory * m / static_cast<double>(SynthSpec::kMaxLag);
        }
        double spill = 0.0;
        for (const auto* n : nb) spill += n->x3[t];
        if (!nb.empty()) spill /= static_cast<double>(nb.size());
        v += spec.spillover * (a.spill * spill + a.shock * shock[t]);
        s.lin[t] = v;
      }
      all_cells.push_back(c);
    }
  }

  // Calibrate b0 so the mean planted probability equals positive_rate.
  auto mean_prob = [&](double b0) {
    double acc = 0.0;
    for (const auto& [_, s] : series)
      for (double v : s.lin) acc += detail::logistic(b0 + v);
    return acc / static_cast<double>(series.size() * H);
  };
  double lo = -30.0, hi = 30.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    (mean_prob(mid) < spec.positive_rate ? lo : hi) = mid;
  }
  w.b0 = 0.5 * (lo + hi);

  std::size_t positives = 0;
  for (const auto& c : all_cells) {
    const auto& s = series[c];
    const auto& tr = w.truth[c];
    CounterRng rng(spec.seed, stream_id("windows:" + c.to_string()));
    // Static per-cell attributes.
    const double signal = rng.uniform() < 0.3 ? 1.0 : 0.0;
    const double crossing = rng.uniform() < 0.2 ? 1.0 : 0.0;
    const double density = std::exp(7.0 + 0.8 * rng.normal());
    const double home = std::exp(12.3 + 0.4 * rng.normal());
    const double renter = rng.uniform(0.2, 0.7);
    double sky = std::floor(rng.uniform() * 5.0);

    const double noise = tr.high_volatility ? spec.hv_noise_scale : 1.0;
    auto& out = w.dataset.series[c];
    auto& prob = w.probability[c];
    out.reserve(H);
    prob.reserve(H);
    for (std::size_t t = 0; t < H; ++t) {
      AtomicWindow aw;
      aw.cell = c;
      aw.window_start = spec.start + static_cast<std::int64_t>(t) * 3600;
      aw.features.assign(kFeatureCount, 0.0);
      write_temporal_features(aw, cal);
      if (rng.uniform() < 0.2) sky = std::floor(rng.uniform() * 5.0);
      auto set = [&](const char* name, double v) { aw.features[feature_index(name)] = v; };
      set("tmpf", 50.0 + 10.0 * s.x1[t]);
      set("alti", 30.0 + 0.15 * s.x2[t]);
      set("dwpf", 40.0 + 8.0 * s.x3[t]);
      set("relh", 60.0 + 12.0 * s.obs[t]);
      set("drct", 10.0 * std::floor(rng.uniform() * 36.0));
      set("sknt", 8.0 * noise * std::abs(rng.normal()));
      set("vsby", std::max(0.0, 10.0 - 2.0 * noise * std::abs(rng.normal())));
      set("p01i", 0.1 * noise * std::max(0.0, rng.normal()));
      set("skyc1", sky);
      set("Traffic_Signal", signal);
      set("Crossing", crossing);
      set("population_density", density);
      set("median_home_value", home);
      set("housing_occupancy_renter_occupied", renter);
      const double p = detail::logistic(w.b0 + s.lin[t]);
      aw.y = rng.uniform() < p ? 1 : 0;
      if (aw.y) {
        const double u = rng.uniform();
        aw.severity_label = u < 0.1 ? 1 : u < 0.7 ? 2 : u < 0.95 ? 3 : 4;
      }
      positives += static_cast<std::size_t>(aw.y);
      prob.push_back(p);
      out.push_back(std::move(aw));
    }
    w.tiles[c] = synth_tile(tr, spec.tile_px, spec.seed, c);
  }
  w.empirical_rate = static_cast<double>(positives) / static_cast<double>(all_cells.size() * H);

  auto& ds = w.dataset;
  ds.topology = build_topology(all_cells);
  ds.start = spec.start;
  ds.window_seconds = 3600;
  ds.hours = H;
  ds.stats = compute_stats(ds, train_slots(H));
  return w;
}

/// Raw per-hour observation records for the world, one per cell-hour
/// (severity 0 when nothing happened), with fields dropped at missing_rate.
/// Junk cells are appended: one with too few records and one whose records
/// are too often incomplete; the quality filters remove both.
inline std::vector<RawRecord> synth_records(const SynthWorld& w) {
  const auto& spec = w.spec;
  std::vector<RawRecord> out;
  out.reserve(w.dataset.series.size() * spec.hours + 400);
  const auto& names = record_feature_names();
  auto to_record = [&](const AtomicWindow& aw, CounterRng& rng, double drop) {
    RawRecord r;
    r.cell = aw.cell;
    r.timestamp = aw.window_start + static_cast<std::int64_t>(std::floor(rng.uniform() * 3600.0));
    r.severity = aw.severity_label;
    for (const auto& n : names) {
      const double v = aw.features[feature_index(n)];
      r.features[n] = rng.uniform() < drop ? std::nullopt : std::optional<double>(v);
    }
    return r;
  };
  for (const auto& [c, series] : w.dataset.series) {
    CounterRng rng(spec.seed, stream_id("records:" + c.to_string()));
    for (const auto& aw : series) out.push_back(to_record(aw, rng, spec.missing_rate));
  }
  const auto& first = w.dataset.series.begin()->second;
  for (std::size_t k = 0; k < spec.junk_cells; ++k) {
    const CellIndex jc{100 + static_cast<int>(k), 100, region_name(0)};
    CounterRng rng(spec.seed, stream_id("junk:" + jc.to_string()));
    const bool sparse = k % 2 == 0;
    const std::size_t n = std::min<std::size_t>(sparse ? 60 : 200, spec.hours);
    for (std::size_t t = 0; t < n; ++t) {
      AtomicWindow aw = first[t];
      aw.cell = jc;
      out.push_back(to_record(aw, rng, sparse ? 0.0 : 0.2));
    }
  }
  return out;
}

inline std::vector<std::string> region_ids(const Dataset& ds) {
  std::vector<std::string> out;
  for (const auto& c : ds.topology.cells())
    if (out.empty() || out.back() != c.region_id) out.push_back(c.region_id);
  return out;
}

/// Sub-dataset restricted to the given regions; stats are recomputed over
/// the subset's training slots.
inline Dataset select_regions(const Dataset& ds, const std::vector<std::string>& regions) {
  Dataset out;
  out.start = ds.start;
  out.window_seconds = ds.window_seconds;
  out.hours = ds.hours;
  std::vector<CellIndex> cells;
  for (const auto& [c, s] : ds.series)
    if (std::find(regions.begin(), regions.end(), c.region_id) != regions.end()) {
      cells.push_back(c);
      out.series[c] = s;
    }
  if (cells.empty()) throw ValidationError("no cells in the selected regions");
  out.topology = build_topology(cells);
  out.stats = compute_stats(out, train_slots(out.hours));
  return out;
}

inline nlohmann::ordered_json synth_manifest(const SynthWorld& w) {
  const auto& s = w.spec;
  nlohmann::ordered_json j;
  j["generator"] = "alcofm synth";
  j["settings"] = {{"regions", s.regions},       {"cols", s.cols},
               {"rows", s.rows},               {"hours", s.hours},
               {"tile_px", s.tile_px},         {"hv_fraction", s.hv_fraction},
               {"hv_noise_scale", s.hv_noise_scale},
               {"spillover", s.spillover},     {"positive_rate", s.positive_rate},
               {"shifted_regions", s.shifted_regions}, {"missing_rate", s.missing_rate},
               {"junk_cells", s.junk_cells},   {"start", s.start},
               {"seed", s.seed}};
  j["period"] = {{"start", s.start}, {"end", s.start + static_cast<std::int64_t>(s.hours) * 3600}};
  j["risk_function"] =
      "logit = b0 + a_cur*x1(t) + [hv]*a_mem*mean_{k<6} x2(t-k) + spillover*(a_spill*mean_nb x3(t) + "
      "a_shock*s_region(t)) + a_tile*o_c + a_int*o_c*x1(t); x1->tmpf, x2->alti, x3->dwpf, s+noise->relh, "
      "o_c->tile intensity; hv cells: Student-t(3) innovations, hv_noise_scale x nuisance noise (relh, sknt, vsby, "
      "p01i), textured tiles";
  auto coef = [](const PlantedCoefficients& a) {
    return nlohmann::ordered_json{{"a_cur", a.current}, {"a_mem", a.memory},  {"a_spill", a.spill},
                                  {"a_shock", a.shock}, {"a_tile", a.tile},   {"a_int", a.interaction},
                                  {"offset", a.offset}};
  };
  j["coefficients"] = coef({});
  j["shifted_coefficients"] = coef(PlantedCoefficients::shifted());
  j["b0"] = w.b0;
  j["empirical_positive_rate"] = w.empirical_rate;
  auto& cells = j["cells"] = nlohmann::ordered_json::array();
  for (const auto& [c, t] : w.truth)
    cells.push_back({{"cell", c.to_string()},
                     {"high_volatility", t.high_volatility},
                     {"shifted", t.shifted},
                     {"tile_offset", t.tile_offset}});
  return j;
}

}  // namespace alcofm
