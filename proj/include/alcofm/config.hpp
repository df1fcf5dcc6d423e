#pragma once

// Flat "key = value" run configuration shared by every CLI command. Lines
// starting with '#' are comments. Unknown keys and malformed values are
// errors, so a typo never silently falls back to a default.

#include <charconv>
#include <functional>
#include <map>
#include <sstream>
#include <string>

#include "alcofm/harness.hpp"
#include "alcofm/synth.hpp"

namespace alcofm {

struct RunConfig {
  SynthSpec synth;
  PipelineConfig pipeline;
  ModelConfig model;
  TrainConfig train;

  void validate() const {
    synth.validate();
    model.enc.validate();
    model.gat.validate();
    train.validate();
    if (synth.tile_px != model.enc.tile_px) throw ValidationError("synth.tile_px and model.tile_px differ");
    if (model.gate_low_pct < 0 || model.gate_high_pct > 100 || model.gate_low_pct > model.gate_high_pct)
      throw ValidationError("gate percentiles must satisfy 0 <= low <= high <= 100");
  }
};

namespace detail {

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T v{};
  const char* b = text.data();
  const char* e = b + text.size();
  auto [p, ec] = std::from_chars(b, e, v);
  if (ec != std::errc() || p != e) throw ValidationError("bad value '" + text + "' for " + key);
  return v;
}

inline bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ValidationError("bad boolean '" + text + "' for " + key);
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

struct Binding {
  std::function<void(const std::string&)> set;
  std::function<std::string()> get;
};

template <typename T>
Binding bind(const std::string& key, T& ref) {
  Binding b;
  if constexpr (std::is_same_v<T, bool>) {
    b.set = [&ref, key](const std::string& s) { ref = parse_bool(key, s); };
    b.get = [&ref] { return std::string(ref ? "true" : "false"); };
  } else {
    b.set = [&ref, key](const std::string& s) { ref = parse_number<T>(key, s); };
    b.get = [&ref] {
      if constexpr (std::is_floating_point_v<T>) {
        char buf[32];
        auto [p, ec] = std::to_chars(buf, buf + sizeof buf, ref);
        return std::string(buf, p);
      } else {
        return std::to_string(ref);
      }
    };
  }
  return b;
}

}  // namespace detail

/// Key table over a RunConfig; the bindings refer into `c`.
inline std::map<std::string, detail::Binding> config_keys(RunConfig& c) {
  using detail::bind;
  return {
      {"synth.regions", bind("synth.regions", c.synth.regions)},
      {"synth.cols", bind("synth.cols", c.synth.cols)},
      {"synth.rows", bind("synth.rows", c.synth.rows)},
      {"synth.hours", bind("synth.hours", c.synth.hours)},
      {"synth.tile_px", bind("synth.tile_px", c.synth.tile_px)},
      {"synth.hv_fraction", bind("synth.hv_fraction", c.synth.hv_fraction)},
      {"synth.hv_noise_scale", bind("synth.hv_noise_scale", c.synth.hv_noise_scale)},
      {"synth.spillover", bind("synth.spillover", c.synth.spillover)},
      {"synth.positive_rate", bind("synth.positive_rate", c.synth.positive_rate)},
      {"synth.shifted_regions", bind("synth.shifted_regions", c.synth.shifted_regions)},
      {"synth.missing_rate", bind("synth.missing_rate", c.synth.missing_rate)},
      {"synth.junk_cells", bind("synth.junk_cells", c.synth.junk_cells)},
      {"synth.start", bind("synth.start", c.synth.start)},
      {"synth.seed", bind("synth.seed", c.synth.seed)},
      {"pipeline.min_records", bind("pipeline.min_records", c.pipeline.filter.min_records)},
      {"pipeline.min_complete", bind("pipeline.min_complete", c.pipeline.filter.min_complete)},
      {"pipeline.knn_k", bind("pipeline.knn_k", c.pipeline.knn_k)},
      {"pipeline.train_fraction", bind("pipeline.train_fraction", c.pipeline.train_fraction)},
      {"model.d", bind("model.d", c.model.enc.d)},
      {"model.T", bind("model.T", c.model.enc.T)},
      {"model.P", bind("model.P", c.model.enc.P)},
      {"model.tile_px", bind("model.tile_px", c.model.enc.tile_px)},
      {"model.layers", bind("model.layers", c.model.enc.n_layers)},
      {"model.heads", bind("model.heads", c.model.enc.n_heads)},
      {"model.time_embedding", bind("model.time_embedding", c.model.enc.time_embedding)},
      {"model.pos_embedding", bind("model.pos_embedding", c.model.enc.pos_embedding)},
      {"model.d_h", bind("model.d_h", c.model.fusion.d_h)},
      {"model.fusion_layers", bind("model.fusion_layers", c.model.fusion.layers)},
      {"model.leaky_slope", bind("model.leaky_slope", c.model.gat.leaky_slope)},
      {"model.globals", bind("model.globals", c.model.sparse.globals)},
      {"model.sparse_blocks", bind("model.sparse_blocks", c.model.sparse.blocks)},
      {"model.head_hidden", bind("model.head_hidden", c.model.head.hidden)},
      {"model.dropout", bind("model.dropout", c.model.head.dropout)},
      {"model.fixed_window", bind("model.fixed_window", c.model.fixed_window)},
      {"model.mc_passes", bind("model.mc_passes", c.model.mc_passes)},
      {"model.gate_low_pct", bind("model.gate_low_pct", c.model.gate_low_pct)},
      {"model.gate_high_pct", bind("model.gate_high_pct", c.model.gate_high_pct)},
      {"train.epochs", bind("train.epochs", c.train.epochs)},
      {"train.batch_windows", bind("train.batch_windows", c.train.batch_windows)},
      {"train.steps_per_epoch", bind("train.steps_per_epoch", c.train.steps_per_epoch)},
      {"train.val_stride", bind("train.val_stride", c.train.val_stride)},
      {"train.lr_numeric", bind("train.lr_numeric", c.train.lr_numeric)},
      {"train.lr_visual", bind("train.lr_visual", c.train.lr_visual)},
      {"train.lr_other", bind("train.lr_other", c.train.lr_other)},
      {"train.weight_decay", bind("train.weight_decay", c.train.weight_decay)},
      {"train.threshold", bind("train.threshold", c.train.threshold)},
      {"train.train_fraction", bind("train.train_fraction", c.train.train_fraction)},
      {"train.val_fraction", bind("train.val_fraction", c.train.val_fraction)},
      {"train.finetune_epochs", bind("train.finetune_epochs", c.train.finetune_epochs)},
      {"train.finetune_patience", bind("train.finetune_patience", c.train.finetune_patience)},
      {"train.seed", bind("train.seed", c.train.seed)},
  };
}

/// Applies one "key=value" assignment.
inline void set_config(RunConfig& c, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ValidationError("expected key=value, got '" + assignment + "'");
  const auto key = detail::trim(assignment.substr(0, eq));
  const auto value = detail::trim(assignment.substr(eq + 1));
  auto keys = config_keys(c);
  auto it = keys.find(key);
  if (it == keys.end()) throw ValidationError("unknown config key '" + key + "'");
  it->second.set(value);
}

inline void apply_config_text(RunConfig& c, const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    if (detail::trim(line).empty()) continue;
    try {
      set_config(c, line);
    } catch (const ValidationError& e) {
      throw ValidationError("config line " + std::to_string(lineno) + ": " + e.what());
    }
  }
}

/// Every key with its current value, one per line, in key order.
inline std::string config_text(const RunConfig& c) {
  RunConfig copy = c;
  std::string out;
  for (const auto& [k, b] : config_keys(copy)) out += k + " = " + b.get() + "\n";
  return out;
}

}  // namespace alcofm
