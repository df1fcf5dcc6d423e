#pragma once

// On-disk formats.
//   records:  JSON lines {"cell","timestamp","severity","features":{name: value|null}}
//   dataset:  "ALCODS1\n", u64 header length, JSON header, then per cell (node
//             order) per hour: 21 f64 features, i32 severity, i32 label
//   tile:     u8 side, then side*side f64 row-major
//   model:    one JSON document (config, variant, gate thresholds, parameters)

#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "alcofm/model.hpp"

namespace alcofm {

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---------------------------------------------------------------------------
// Records

inline nlohmann::ordered_json record_to_json(const RawRecord& r) {
  nlohmann::ordered_json j;
  j["cell"] = r.cell.to_string();
  j["timestamp"] = r.timestamp;
  j["severity"] = r.severity;
  auto& f = j["features"] = nlohmann::ordered_json::object();
  for (const auto& [k, v] : r.features) f[k] = v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
  return j;
}

inline RawRecord record_from_json(const nlohmann::json& j) {
  RawRecord r;
  r.cell = CellIndex::parse(j.at("cell").get<std::string>());
  r.timestamp = j.at("timestamp").get<std::int64_t>();
  r.severity = j.at("severity").get<int>();
  for (const auto& [k, v] : j.at("features").items())
    r.features[k] = v.is_null() ? std::nullopt : std::optional<double>(v.get<double>());
  return r;
}

inline void write_records(const std::filesystem::path& path, std::span<const RawRecord> records) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& r : records) out << record_to_json(r).dump() << '\n';
}

inline std::vector<RawRecord> read_records(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::vector<RawRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(record_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dataset

namespace detail {

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw ValidationError("truncated binary file");
  return v;
}

inline constexpr char kDatasetMagic[] = "ALCODS1\n";

}  // namespace detail

inline void write_dataset(const std::filesystem::path& path, const Dataset& ds) {
  nlohmann::ordered_json h;
  h["start"] = ds.start;
  h["window_seconds"] = ds.window_seconds;
  h["hours"] = ds.hours;
  h["feature_names"] = ds.feature_names;
  h["mean"] = ds.stats.mean;
  h["std"] = ds.stats.std;
  auto& cells = h["cells"] = nlohmann::ordered_json::array();
  for (const auto& c : ds.topology.cells()) cells.push_back(c.to_string());
  const std::string header = h.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(detail::kDatasetMagic, 8);
  detail::put<std::uint64_t>(out, header.size());
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (const auto& c : ds.topology.cells()) {
    const auto& s = ds.windows(c);
    if (s.size() != ds.hours) throw ValidationError("dataset cells must hold one window per hour");
    for (const auto& w : s) {
      out.write(reinterpret_cast<const char*>(w.features.data()), static_cast<std::streamsize>(kFeatureCount * 8));
      detail::put<std::int32_t>(out, w.severity_label);
      detail::put<std::int32_t>(out, w.y);
    }
  }
}

inline Dataset read_dataset(const std::filesystem::path& path,
                            const HolidayCalendar& calendar = HolidayCalendar::us_fixed_date()) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, detail::kDatasetMagic, 8) != 0) throw ValidationError("not a dataset file");
  const auto len = detail::get<std::uint64_t>(in);
  std::string header(len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(len));
  const auto h = nlohmann::json::parse(header);
  Dataset ds;
  ds.start = h.at("start").get<std::int64_t>();
  ds.window_seconds = h.at("window_seconds").get<std::int64_t>();
  ds.hours = h.at("hours").get<std::size_t>();
  ds.feature_names = h.at("feature_names").get<std::vector<std::string>>();
  ds.stats.mean = h.at("mean").get<std::vector<double>>();
  ds.stats.std = h.at("std").get<std::vector<double>>();
  std::vector<CellIndex> cells;
  for (const auto& s : h.at("cells")) cells.push_back(CellIndex::parse(s.get<std::string>()));
  for (const auto& c : cells) {
    auto& series = ds.series[c];
    series.resize(ds.hours);
    for (std::size_t t = 0; t < ds.hours; ++t) {
      auto& w = series[t];
      w.cell = c;
      w.window_start = ds.start + static_cast<std::int64_t>(t) * ds.window_seconds;
      w.features.resize(kFeatureCount);
      in.read(reinterpret_cast<char*>(w.features.data()), static_cast<std::streamsize>(kFeatureCount * 8));
      w.severity_label = detail::get<std::int32_t>(in);
      w.y = detail::get<std::int32_t>(in);
      w.temporal = encode_temporal(w.window_start, calendar);
    }
  }
  if (!in) throw ValidationError("truncated dataset file");
  ds.topology = build_topology(cells);
  return ds;
}

// ---------------------------------------------------------------------------
// Tiles

inline void write_tile(const std::filesystem::path& path, const Tensor& tile) {
  if (tile.rows() != tile.cols() || tile.rows() == 0 || tile.rows() > 255) throw ShapeError("tiles are square, side <= 255");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  detail::put<std::uint8_t>(out, static_cast<std::uint8_t>(tile.rows()));
  out.write(reinterpret_cast<const char*>(tile.data().data()), static_cast<std::streamsize>(tile.size() * 8));
}

inline Tensor read_tile(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  const auto side = detail::get<std::uint8_t>(in);
  Tensor t(side, side);
  in.read(reinterpret_cast<char*>(t.data().data()), static_cast<std::streamsize>(t.size() * 8));
  if (!in) throw ValidationError("truncated tile " + path.string());
  return t;
}

inline std::string tile_filename(const CellIndex& c) {
  return c.region_id + "_" + std::to_string(c.q) + "_" + std::to_string(c.r) + ".tile";
}

inline void write_tiles(const std::filesystem::path& dir, const std::map<CellIndex, Tensor>& tiles) {
  std::filesystem::create_directories(dir);
  for (const auto& [c, t] : tiles) write_tile(dir / tile_filename(c), t);
}

inline std::map<CellIndex, Tensor> read_tiles(const std::filesystem::path& dir, const std::vector<CellIndex>& cells) {
  std::map<CellIndex, Tensor> out;
  for (const auto& c : cells) out[c] = read_tile(dir / tile_filename(c));
  return out;
}

// ---------------------------------------------------------------------------
// Model

inline nlohmann::ordered_json model_config_json(const ModelConfig& c) {
  return {{"d", c.enc.d},
          {"T", c.enc.T},
          {"P", c.enc.P},
          {"tile_px", c.enc.tile_px},
          {"n_layers", c.enc.n_layers},
          {"n_heads", c.enc.n_heads},
          {"time_embedding", c.enc.time_embedding},
          {"pos_embedding", c.enc.pos_embedding},
          {"d_h", c.fusion.d_h},
          {"fusion_layers", c.fusion.layers},
          {"leaky_slope", c.gat.leaky_slope},
          {"globals", c.sparse.globals},
          {"sparse_blocks", c.sparse.blocks},
          {"head_hidden", c.head.hidden},
          {"dropout", c.head.dropout},
          {"fixed_window", c.fixed_window},
          {"mc_passes", c.mc_passes},
          {"gate_low_pct", c.gate_low_pct},
          {"gate_high_pct", c.gate_high_pct}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.enc.d = j.at("d");
  c.enc.T = j.at("T");
  c.enc.P = j.at("P");
  c.enc.tile_px = j.at("tile_px");
  c.enc.n_layers = j.at("n_layers");
  c.enc.n_heads = j.at("n_heads");
  c.enc.time_embedding = j.at("time_embedding");
  c.enc.pos_embedding = j.at("pos_embedding");
  c.fusion.d_h = j.at("d_h");
  c.fusion.layers = j.at("fusion_layers");
  c.gat.leaky_slope = j.at("leaky_slope");
  c.sparse.globals = j.at("globals");
  c.sparse.blocks = j.at("sparse_blocks");
  c.head.hidden = j.at("head_hidden");
  c.head.dropout = j.at("dropout");
  c.fixed_window = j.at("fixed_window");
  c.mc_passes = j.at("mc_passes");
  c.gate_low_pct = j.at("gate_low_pct");
  c.gate_high_pct = j.at("gate_high_pct");
  return c;
}

inline nlohmann::ordered_json model_to_json(const Model& m) {
  nlohmann::ordered_json j;
  j["variant"] = variant_key(m.variant);
  j["config"] = model_config_json(m.cfg);
  j["gate"] = {{"tau_low", m.gate.tau_low}, {"tau_high", m.gate.tau_high}};
  j["params"] = m.params.to_json();
  return j;
}

inline Model model_from_json(const nlohmann::json& j) {
  Model m;
  m.variant = parse_variant(j.at("variant").get<std::string>());
  m.cfg = model_config_from_json(j.at("config"));
  m.gate = {j.at("gate").at("tau_low").get<double>(), j.at("gate").at("tau_high").get<double>()};
  m.params = ParamStore::from_json(j.at("params"));
  return m;
}

inline void save_model(const std::filesystem::path& path, const Model& m) { write_text(path, model_to_json(m).dump() + "\n"); }

inline Model load_model(const std::filesystem::path& path) { return model_from_json(nlohmann::json::parse(read_text(path))); }

}  // namespace alcofm
