#pragma once

// Record ingestion through imputed 1-hour atomic windows:
//   records -> completeness filters -> windows (worst-case severity)
//           -> weather gap interpolation -> train-split stats -> kNN fill.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "alcofm/hexgrid.hpp"
#include "alcofm/temporal.hpp"

namespace alcofm {

inline constexpr std::size_t kFeatureCount = 21;

/// Model feature order.
inline const std::array<std::string, kFeatureCount>& feature_names() {
  static const std::array<std::string, kFeatureCount> names{
      "Date",  "Day",   "Month", "relh",           "alti",        "drct",     "tmpf",
      "dwpf",  "sknt",  "Rush_Hour", "Season",     "vsby",        "skyc1",    "Traffic_Signal",
      "Part_of_Day", "p01i", "Crossing", "US_Holiday", "population_density", "median_home_value",
      "housing_occupancy_renter_occupied"};
  return names;
}

inline std::size_t feature_index(const std::string& name) {
  const auto& n = feature_names();
  auto it = std::find(n.begin(), n.end(), name);
  if (it == n.end()) throw ValidationError("unknown feature " + name);
  return static_cast<std::size_t>(it - n.begin());
}

/// Columns derived from the window timestamp rather than read from records.
inline const std::vector<std::string>& temporal_feature_names() {
  static const std::vector<std::string> v{"Date", "Day", "Month", "Rush_Hour", "Season", "Part_of_Day", "US_Holiday"};
  return v;
}

/// Hourly weather fields that are interpolated across gaps.
inline const std::vector<std::string>& weather_feature_names() {
  static const std::vector<std::string> v{"relh", "alti", "drct", "tmpf", "dwpf", "sknt", "vsby", "skyc1", "p01i"};
  return v;
}

/// Record-sourced columns of the schema (everything but the temporal ones).
inline const std::vector<std::string>& record_feature_names() {
  static const std::vector<std::string> v = [] {
    std::vector<std::string> out;
    const auto& t = temporal_feature_names();
    for (const auto& n : feature_names())
      if (std::find(t.begin(), t.end(), n) == t.end()) out.push_back(n);
    return out;
  }();
  return v;
}

inline bool is_absent(double v) { return std::isnan(v); }
inline constexpr double kAbsent = std::numeric_limits<double>::quiet_NaN();

struct RawRecord {
  CellIndex cell;
  std::int64_t timestamp = 0;  // UTC seconds
  int severity = 0;            // 0 = no accident
  std::map<std::string, std::optional<double>> features;
};

struct AtomicWindow {
  CellIndex cell;
  std::int64_t window_start = 0;
  std::vector<double> features;  // kFeatureCount entries, NaN when absent
  TemporalCode temporal;
  int severity_label = 0;
  int y = 0;
};

struct FeatureStats {
  std::vector<double> mean;
  std::vector<double> std;  // population std; 0 for constant columns
};

struct Dataset {
  GridTopology topology;
  std::map<CellIndex, std::vector<AtomicWindow>> series;
  std::vector<std::string> feature_names{::alcofm::feature_names().begin(), ::alcofm::feature_names().end()};
  FeatureStats stats;
  std::int64_t start = 0;        // first window_start
  std::int64_t window_seconds = 3600;
  std::size_t hours = 0;         // windows per cell

  const std::vector<AtomicWindow>& windows(const CellIndex& c) const { return series.at(c); }
};

struct Period {
  std::int64_t start = 0;  // inclusive
  std::int64_t end = 0;    // exclusive
};

// ---------------------------------------------------------------------------
// Quality measures and filters

/// Fraction of absent values over |records| x |columns| entries.
inline double missingness_ratio(std::span<const RawRecord> records, std::span<const std::string> columns) {
  if (records.empty()) throw ValidationError("missingness_ratio needs at least one record");
  if (columns.empty()) throw ValidationError("missingness_ratio needs at least one column");
  std::size_t missing = 0;
  for (const auto& r : records) {
    for (const auto& c : columns) {
      auto it = r.features.find(c);
      if (it == r.features.end() || !it->second.has_value() || std::isnan(*it->second)) ++missing;
    }
  }
  return static_cast<double>(missing) / static_cast<double>(records.size() * columns.size());
}

/// Region ids in ascending order of missingness ratio, truncated to `keep`.
inline std::vector<std::string> rank_regions_by_missingness(std::span<const RawRecord> records,
                                                            std::span<const std::string> columns, std::size_t keep) {
  std::map<std::string, std::vector<RawRecord>> by_region;
  for (const auto& r : records) by_region[r.cell.region_id].push_back(r);
  std::vector<std::pair<double, std::string>> ranked;
  for (const auto& [id, recs] : by_region) ranked.emplace_back(missingness_ratio(recs, columns), id);
  std::sort(ranked.begin(), ranked.end());
  std::vector<std::string> out;
  for (std::size_t i = 0; i < ranked.size() && i < keep; ++i) out.push_back(ranked[i].second);
  return out;
}

struct CellQuality {
  std::size_t total_records = 0;
  std::size_t complete_records = 0;

  double non_missing_ratio() const {
    return total_records ? static_cast<double>(complete_records) / static_cast<double>(total_records) : 0.0;
  }
};

inline bool record_complete(const RawRecord& r, std::span<const std::string> core) {
  for (const auto& c : core) {
    auto it = r.features.find(c);
    if (it == r.features.end() || !it->second.has_value() || std::isnan(*it->second)) return false;
  }
  return true;
}

inline std::map<CellIndex, CellQuality> cell_quality(std::span<const RawRecord> records,
                                                     std::span<const std::string> core) {
  std::map<CellIndex, CellQuality> q;
  for (const auto& r : records) {
    auto& e = q[r.cell];
    ++e.total_records;
    if (record_complete(r, core)) ++e.complete_records;
  }
  return q;
}

struct FilterConfig {
  std::size_t min_records = 100;
  double min_complete = 0.95;
};

/// Keeps cells with TotalRecords >= min_records and NonMissingRatio >= min_complete.
inline std::set<CellIndex> filter_cells(const std::map<CellIndex, CellQuality>& quality, const FilterConfig& cfg = {}) {
  std::set<CellIndex> keep;
  for (const auto& [cell, q] : quality) {
    if (q.total_records < cfg.min_records) continue;
    // Integer cross-multiplication keeps the 0.95 boundary exact.
    const double lhs = static_cast<double>(q.complete_records);
    const double rhs = cfg.min_complete * static_cast<double>(q.total_records);
    if (lhs < rhs && std::abs(lhs - rhs) > 1e-9 * std::max(1.0, rhs)) continue;
    keep.insert(cell);
  }
  return keep;
}

// ---------------------------------------------------------------------------
// Weather aggregation

/// Mean of present values; NaN when none are present.
inline double mean_present(std::span<const double> values) {
  double s = 0.0;
  std::size_t n = 0;
  for (double v : values)
    if (!std::isnan(v)) {
      s += v;
      ++n;
    }
  return n ? s / static_cast<double>(n) : kAbsent;
}

/// Mean of integer category codes rounded half away from zero.
inline double mean_category(std::span<const double> codes) {
  const double m = mean_present(codes);
  return std::isnan(m) ? m : std::round(m);
}

/// Aggregates one window's observations. Numeric fields average; skyc1
/// averages its codes and rounds. Fields with no observation stay absent.
inline std::map<std::string, double> aggregate_weather(
    std::span<const std::map<std::string, std::optional<double>>> observations) {
  std::map<std::string, double> out;
  for (const auto& name : weather_feature_names()) {
    std::vector<double> vals;
    for (const auto& obs : observations) {
      auto it = obs.find(name);
      if (it != obs.end() && it->second.has_value()) vals.push_back(*it->second);
    }
    out[name] = name == "skyc1" ? mean_category(vals) : mean_present(vals);
  }
  return out;
}

/// Linear interpolation between the nearest observed neighbors on both
/// sides; leading/trailing gaps copy the nearest observation.
inline void interpolate_gaps(std::span<double> series) {
  std::vector<std::size_t> obs;
  for (std::size_t i = 0; i < series.size(); ++i)
    if (!std::isnan(series[i])) obs.push_back(i);
  if (obs.empty() || obs.size() == series.size()) return;
  for (std::size_t i = 0; i < obs.front(); ++i) series[i] = series[obs.front()];
  for (std::size_t i = obs.back() + 1; i < series.size(); ++i) series[i] = series[obs.back()];
  for (std::size_t k = 0; k + 1 < obs.size(); ++k) {
    const std::size_t a = obs[k], b = obs[k + 1];
    for (std::size_t i = a + 1; i < b; ++i) {
      const double t = static_cast<double>(i - a) / static_cast<double>(b - a);
      series[i] = series[a] + t * (series[b] - series[a]);
    }
  }
}

// ---------------------------------------------------------------------------
// Window construction

inline void write_temporal_features(AtomicWindow& w, const HolidayCalendar& cal) {
  w.temporal = encode_temporal(w.window_start, cal);
  w.features[feature_index("Date")] = w.temporal.date;
  w.features[feature_index("Day")] = w.temporal.day;
  w.features[feature_index("Month")] = w.temporal.month;
  w.features[feature_index("Rush_Hour")] = w.temporal.rush_hour;
  w.features[feature_index("Season")] = w.temporal.season;
  w.features[feature_index("Part_of_Day")] = w.temporal.part_of_day;
  w.features[feature_index("US_Holiday")] = w.temporal.holiday;
}

/// One window per (cell, slot) over the whole period for every cell that has
/// at least one record. Slots without records carry absent record features
/// and y = 0; otherwise severity_label is the worst contained severity.
/// With emit_background = false only slots holding records are emitted.
inline Dataset build_windows(std::span<const RawRecord> records, Period period,
                             const HolidayCalendar& calendar = HolidayCalendar::us_fixed_date(),
                             std::int64_t window_seconds = 3600, bool emit_background = true) {
  if (window_seconds <= 0 || period.start % window_seconds != 0 || period.end <= period.start)
    throw ValidationError("period must be non-empty and aligned to the window length");
  const auto slots = static_cast<std::size_t>((period.end - period.start + window_seconds - 1) / window_seconds);

  std::map<CellIndex, std::vector<std::vector<const RawRecord*>>> grouped;
  for (const auto& r : records) {
    if (r.timestamp < period.start || r.timestamp >= period.end)
      throw ValidationError("record timestamp outside the study period");
    if (r.severity < 0) throw ValidationError("negative severity");
    auto& cell_slots = grouped[r.cell];
    if (cell_slots.empty()) cell_slots.resize(slots);
    cell_slots[static_cast<std::size_t>((r.timestamp - period.start) / window_seconds)].push_back(&r);
  }

  Dataset ds;
  ds.start = period.start;
  ds.window_seconds = window_seconds;
  ds.hours = slots;
  std::vector<CellIndex> cells;
  for (auto& [cell, cell_slots] : grouped) {
    cells.push_back(cell);
    auto& series = ds.series[cell];
    series.reserve(slots);
    for (std::size_t s = 0; s < slots; ++s) {
      if (!emit_background && cell_slots[s].empty()) continue;
      AtomicWindow w;
      w.cell = cell;
      w.window_start = period.start + static_cast<std::int64_t>(s) * window_seconds;
      w.features.assign(kFeatureCount, kAbsent);
      write_temporal_features(w, calendar);
      const auto& members = cell_slots[s];
      if (!members.empty()) {
        std::vector<std::map<std::string, std::optional<double>>> obs;
        for (const auto* r : members) {
          w.severity_label = std::max(w.severity_label, r->severity);
          obs.push_back(r->features);
        }
        for (const auto& [name, v] : aggregate_weather(obs)) w.features[feature_index(name)] = v;
        for (const auto& name : record_feature_names()) {
          const auto& wn = weather_feature_names();
          if (std::find(wn.begin(), wn.end(), name) != wn.end()) continue;
          std::vector<double> vals;
          for (const auto* r : members) {
            auto it = r->features.find(name);
            if (it != r->features.end() && it->second.has_value()) vals.push_back(*it->second);
          }
          w.features[feature_index(name)] = mean_present(vals);
        }
      }
      w.y = w.severity_label > 0 ? 1 : 0;
      series.push_back(std::move(w));
    }
  }
  if (!cells.empty()) ds.topology = build_topology(cells);
  return ds;
}

/// Interpolates every weather column along each cell's time axis.
inline void interpolate_weather(Dataset& ds) {
  for (auto& [cell, series] : ds.series) {
    for (const auto& name : weather_feature_names()) {
      const std::size_t j = feature_index(name);
      std::vector<double> col(series.size());
      for (std::size_t t = 0; t < series.size(); ++t) col[t] = series[t].features[j];
      interpolate_gaps(col);
      if (name == "skyc1")
        for (auto& v : col)
          if (!std::isnan(v)) v = std::round(v);
      for (std::size_t t = 0; t < series.size(); ++t) series[t].features[j] = col[t];
    }
  }
}

/// Number of leading slots that form the training split.
inline std::size_t train_slots(std::size_t hours, double train_fraction = 0.7) {
  return static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(hours)));
}

/// Per-feature mean and population std over present values in the training
/// slots [0, train_slots).
inline FeatureStats compute_stats(const Dataset& ds, std::size_t train_slot_count) {
  FeatureStats st;
  st.mean.assign(kFeatureCount, 0.0);
  st.std.assign(kFeatureCount, 0.0);
  std::vector<double> n(kFeatureCount, 0.0), s2(kFeatureCount, 0.0);
  for (const auto& [_, series] : ds.series)
    for (std::size_t t = 0; t < std::min(train_slot_count, series.size()); ++t)
      for (std::size_t j = 0; j < kFeatureCount; ++j) {
        const double v = series[t].features[j];
        if (std::isnan(v)) continue;
        n[j] += 1.0;
        st.mean[j] += v;
      }
  for (std::size_t j = 0; j < kFeatureCount; ++j) st.mean[j] = n[j] > 0 ? st.mean[j] / n[j] : 0.0;
  for (const auto& [_, series] : ds.series)
    for (std::size_t t = 0; t < std::min(train_slot_count, series.size()); ++t)
      for (std::size_t j = 0; j < kFeatureCount; ++j) {
        const double v = series[t].features[j];
        if (!std::isnan(v)) s2[j] += (v - st.mean[j]) * (v - st.mean[j]);
      }
  for (std::size_t j = 0; j < kFeatureCount; ++j) st.std[j] = n[j] > 0 ? std::sqrt(s2[j] / n[j]) : 0.0;
  return st;
}

// ---------------------------------------------------------------------------
// Imputation

/// Windows flattened in (cell, window_start) order; rows alias dataset windows.
struct FeatureTable {
  std::vector<std::vector<double>*> rows;

  static FeatureTable of(Dataset& ds) {
    FeatureTable t;
    for (auto& [_, series] : ds.series)
      for (auto& w : series) t.rows.push_back(&w.features);
    return t;
  }
};

struct ImputeReport {
  std::size_t filled_values = 0;
  std::size_t fallback_values = 0;  // filled with the training mean (no donors)
};

/// kNN fill over complete rows. Distance is squared Euclidean over the
/// query's observed columns of v / std (zero std counts as 1; centering
/// cancels in differences). Neighbors are ranked by (distance, donor row),
/// so exactly tied distances resolve to the earlier row. Fewer than k donors uses all of them; none falls back to
/// the training mean.
inline ImputeReport knn_impute_rows(std::span<std::vector<double>* const> rows, const FeatureStats& stats,
                                    std::size_t k) {
  if (k == 0) throw ValidationError("knn k must be positive");
  const std::size_t d = stats.mean.size();
  std::vector<double> sd(d);
  for (std::size_t j = 0; j < d; ++j) sd[j] = stats.std[j] > 0.0 ? stats.std[j] : 1.0;

  std::vector<std::size_t> donors;
  std::vector<std::size_t> queries;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = *rows[i];
    if (std::none_of(r.begin(), r.end(), [](double v) { return std::isnan(v); })) donors.push_back(i);
    else queries.push_back(i);
  }
  // Donor values are read-only below, so fills never feed later queries.
  std::vector<double> donor_z(donors.size() * d);
  for (std::size_t a = 0; a < donors.size(); ++a)
    for (std::size_t j = 0; j < d; ++j) donor_z[a * d + j] = (*rows[donors[a]])[j] / sd[j];

  ImputeReport report;
  std::vector<std::pair<double, std::size_t>> ranked;
  std::vector<std::size_t> observed;
  std::vector<double> query_z;
  for (std::size_t qi : queries) {
    auto& row = *rows[qi];
    observed.clear();
    for (std::size_t j = 0; j < d; ++j)
      if (!std::isnan(row[j])) observed.push_back(j);
    if (donors.empty()) {
      for (std::size_t j = 0; j < d; ++j)
        if (std::isnan(row[j])) {
          row[j] = stats.mean[j];
          ++report.fallback_values;
          ++report.filled_values;
        }
      continue;
    }
    ranked.clear();
    ranked.reserve(donors.size());
    query_z.assign(d, 0.0);
    for (std::size_t j : observed) query_z[j] = row[j] / sd[j];
    for (std::size_t a = 0; a < donors.size(); ++a) {
      double dist = 0.0;
      const double* dz = &donor_z[a * d];
      for (std::size_t j : observed) {
        const double diff = query_z[j] - dz[j];
        dist += diff * diff;
      }
      ranked.emplace_back(dist, donors[a]);
    }
    const std::size_t kk = std::min(k, ranked.size());
    std::partial_sort(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(kk), ranked.end());
    for (std::size_t j = 0; j < d; ++j) {
      if (!std::isnan(row[j])) continue;
      double s = 0.0;
      for (std::size_t m = 0; m < kk; ++m) s += (*rows[ranked[m].second])[j];
      row[j] = s / static_cast<double>(kk);
      ++report.filled_values;
    }
  }
  return report;
}

inline ImputeReport impute_knn(Dataset& ds, std::size_t k = 5) {
  auto table = FeatureTable::of(ds);
  return knn_impute_rows(table.rows, ds.stats, k);
}

/// Baseline: every absent value becomes the training-split mean.
inline ImputeReport impute_mean(Dataset& ds) {
  ImputeReport rep;
  for (auto& [_, series] : ds.series)
    for (auto& w : series)
      for (std::size_t j = 0; j < w.features.size(); ++j)
        if (std::isnan(w.features[j])) {
          w.features[j] = ds.stats.mean[j];
          ++rep.filled_values;
        }
  return rep;
}

inline bool dataset_complete(const Dataset& ds) {
  for (const auto& [_, series] : ds.series)
    for (const auto& w : series)
      for (double v : w.features)
        if (std::isnan(v)) return false;
  return true;
}

using Imputer = std::function<void(Dataset&)>;

struct ImputationErrors {
  double mse = 0.0;
  double mae = 0.0;
  double rmse = 0.0;
  std::size_t masked = 0;
};

/// Hides a seeded random fraction of the observed record-sourced values,
/// runs the imputer, and scores it on the hidden values only (raw units).
inline ImputationErrors imputation_eval(const Dataset& complete, double mask_fraction, const Imputer& imputer,
                                        std::uint64_t seed) {
  if (!(mask_fraction > 0.0 && mask_fraction <= 0.5)) throw ValidationError("mask_fraction must lie in (0, 0.5]");
  if (!dataset_complete(complete)) throw ValidationError("imputation_eval expects a complete dataset");
  Dataset work = complete;
  std::vector<std::size_t> cols;
  for (const auto& n : record_feature_names()) cols.push_back(feature_index(n));

  struct Hidden {
    std::vector<double>* row;
    std::size_t col;
    double truth;
  };
  std::vector<Hidden> hidden;
  CounterRng rng(seed, stream_id("imputation_eval"));
  for (auto& [_, series] : work.series)
    for (auto& w : series)
      for (std::size_t j : cols)
        if (rng.uniform() < mask_fraction) {
          hidden.push_back({&w.features, j, w.features[j]});
          w.features[j] = kAbsent;
        }
  if (hidden.empty()) throw ValidationError("mask produced no hidden values");
  imputer(work);
  ImputationErrors e;
  e.masked = hidden.size();
  for (const auto& h : hidden) {
    const double err = (*h.row)[h.col] - h.truth;
    if (std::isnan(err)) throw ValidationError("imputer left a masked value absent");
    e.mse += err * err;
    e.mae += std::abs(err);
  }
  e.mse /= static_cast<double>(hidden.size());
  e.mae /= static_cast<double>(hidden.size());
  e.rmse = std::sqrt(e.mse);
  return e;
}

// ---------------------------------------------------------------------------
// Full preprocessing

struct PipelineConfig {
  FilterConfig filter;
  std::size_t knn_k = 5;
  double train_fraction = 0.7;
  std::int64_t window_seconds = 3600;
};

struct PipelineReport {
  std::size_t input_records = 0;
  std::size_t cells_seen = 0;
  std::size_t cells_kept = 0;
  ImputeReport impute;
};

inline Dataset preprocess(std::span<const RawRecord> records, Period period, const PipelineConfig& cfg,
                          PipelineReport* report = nullptr,
                          const HolidayCalendar& calendar = HolidayCalendar::us_fixed_date()) {
  const auto& core = record_feature_names();
  const auto quality = cell_quality(records, core);
  const auto kept = filter_cells(quality, cfg.filter);
  std::vector<RawRecord> retained;
  for (const auto& r : records)
    if (kept.count(r.cell)) retained.push_back(r);
  Dataset ds = build_windows(retained, period, calendar, cfg.window_seconds);
  interpolate_weather(ds);
  ds.stats = compute_stats(ds, train_slots(ds.hours, cfg.train_fraction));
  const auto imp = impute_knn(ds, cfg.knn_k);
  if (report) {
    report->input_records = records.size();
    report->cells_seen = quality.size();
    report->cells_kept = kept.size();
    report->impute = imp;
  }
  return ds;
}

}  // namespace alcofm
