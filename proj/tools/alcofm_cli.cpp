// alcofm_cli: synthetic data, preprocessing, training, evaluation, ablation,
// fine-tuning and gradient checks. Every command is deterministic given its
// inputs and seeds; progress goes to stderr, results to files.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>

#include "alcofm/config.hpp"
#include "alcofm/gradsuite.hpp"
#include "alcofm/io.hpp"

namespace fs = std::filesystem;
using namespace alcofm;

namespace {

struct Common {
  std::string config;
  std::vector<std::string> sets;
  bool quiet = false;

  void attach(CLI::App* app) {
    app->add_option("--config", config, "flat key=value config file");
    app->add_option("--set", sets, "override one config key (key=value), repeatable");
    app->add_flag("--quiet", quiet, "no progress on stderr");
  }

  RunConfig load() const {
    RunConfig c;
    if (!config.empty()) apply_config_text(c, read_text(config));
    for (const auto& s : sets) set_config(c, s);
    return c;
  }

  ProgressFn progress() const {
    if (quiet) return nullptr;
    return [](const std::string& s) { std::cerr << s << "\n"; };
  }
};

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : s) {
    if (ch == ',') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

/// Loads a dataset plus its tiles, optionally restricted to some regions.
struct Loaded {
  Dataset ds;
  std::map<CellIndex, Tensor> tiles;
};

Loaded load_data(const std::string& data, const std::string& tiles, const std::string& regions) {
  Loaded l;
  l.ds = read_dataset(data);
  if (!regions.empty()) l.ds = select_regions(l.ds, split_list(regions));
  l.tiles = read_tiles(tiles, l.ds.topology.cells());
  return l;
}

void write_pair(const fs::path& stem, const std::string& text, const nlohmann::ordered_json& j) {
  write_text(fs::path(stem).replace_extension(".txt"), text);
  write_text(fs::path(stem).replace_extension(".json"), j.dump(2) + "\n");
  std::cout << "wrote " << fs::path(stem).replace_extension(".txt").string() << " and .json\n";
}

std::string history_table(const std::vector<EpochRecord>& h) {
  std::string out = "epoch  train_loss    val_f1   val_ece\n";
  char buf[96];
  for (const auto& e : h) {
    std::snprintf(buf, sizeof buf, "%5zu %11.6f %9.6f %9.6f\n", e.epoch, e.train_loss, e.val_f1, e.val_ece);
    out += buf;
  }
  return out;
}

int cmd_synth(const Common& common, const std::string& out) {
  RunConfig c = common.load();
  c.validate();
  const auto world = generate_synth(c.synth);
  const fs::path dir(out);
  write_records(dir / "records.jsonl", synth_records(world));
  write_tiles(dir / "tiles", world.tiles);
  write_text(dir / "manifest.json", synth_manifest(world).dump(2) + "\n");
  // The generator's own complete dataset, for worlds too large for the record path.
  write_dataset(dir / "synth_dataset.bin", world.dataset);
  std::cout << "wrote " << (dir / "records.jsonl").string() << ", tiles/ (" << world.tiles.size()
            << " cells), manifest.json, synth_dataset.bin; positive rate " << fmt_real(world.empirical_rate) << "\n";
  return 0;
}

int cmd_preprocess(const Common& common, const std::string& records_path, const std::string& out,
                   const std::string& report_path, std::optional<std::size_t> min_records,
                   std::optional<double> min_complete, std::optional<std::size_t> knn_k) {
  RunConfig c = common.load();
  if (min_records) c.pipeline.filter.min_records = *min_records;
  if (min_complete) c.pipeline.filter.min_complete = *min_complete;
  if (knn_k) c.pipeline.knn_k = *knn_k;
  const auto records = read_records(records_path);
  if (records.empty()) throw ValidationError("no records in " + records_path);
  // The period spans whole hours from the first to the last record.
  std::int64_t lo = records.front().timestamp, hi = lo;
  for (const auto& r : records) {
    lo = std::min(lo, r.timestamp);
    hi = std::max(hi, r.timestamp);
  }
  const std::int64_t w = c.pipeline.window_seconds;
  const Period period{lo - ((lo % w) + w) % w, hi - ((hi % w) + w) % w + w};
  PipelineReport rep;
  const Dataset ds = preprocess(records, period, c.pipeline, &rep);
  write_dataset(out, ds);
  nlohmann::ordered_json j{{"input_records", rep.input_records},
                           {"cells_seen", rep.cells_seen},
                           {"cells_kept", rep.cells_kept},
                           {"hours", ds.hours},
                           {"period_start", period.start},
                           {"period_end", period.end},
                           {"imputed_values", rep.impute.filled_values},
                           {"mean_fallback_values", rep.impute.fallback_values}};
  std::string text;
  for (const auto& [k, v] : j.items()) text += k + "=" + v.dump() + "\n";
  write_pair(report_path.empty() ? fs::path(out).replace_extension("").string() + "_report" : report_path, text, j);
  std::cout << "wrote " << out << " (" << rep.cells_kept << " of " << rep.cells_seen << " cells kept)\n";
  return 0;
}

int cmd_train(const Common& common, const std::string& data, const std::string& tiles, const std::string& regions,
              const std::string& variant, std::optional<std::uint64_t> seed, const std::string& out) {
  RunConfig c = common.load();
  if (seed) c.train.seed = *seed;
  c.validate();
  const auto l = load_data(data, tiles, regions);
  const auto in = prepare_inputs(l.ds, l.tiles, c.model);
  const auto split = chronological_split(in.hours, c.train.train_fraction, c.train.val_fraction);
  const auto v = parse_variant(variant);
  auto res = train(in, make_model(c.model, v, c.train.seed), split, c.train, common.progress());
  if (res.model.flags().gating) search_gate(res.model, in, split, c.train);
  const fs::path dir(out);
  save_model(dir / "model.json", res.model);
  nlohmann::ordered_json h{{"variant", variant_label(v)},
                           {"best_epoch", res.best_epoch},
                           {"best_val_f1", res.best_val_f1},
                           {"class_weights", {{"w0", res.weights.w0}, {"w1", res.weights.w1}}},
                           {"history", history_json(res.history)}};
  write_pair(dir / "history", history_table(res.history), h);
  std::cout << "wrote " << (dir / "model.json").string() << " (best epoch " << res.best_epoch << ")\n";
  return 0;
}

int cmd_eval(const Common& common, const std::string& data, const std::string& tiles, const std::string& regions,
             const std::string& model_path, std::optional<std::size_t> mc_passes, const std::string& which,
             const std::string& out) {
  RunConfig c = common.load();
  Model m = load_model(model_path);
  if (mc_passes) {
    if (*mc_passes == 0) throw ValidationError("--mc-passes must be >= 1");
    m.cfg.mc_passes = *mc_passes;
  }
  const auto l = load_data(data, tiles, regions);
  const auto in = prepare_inputs(l.ds, l.tiles, m.cfg);
  const auto split = chronological_split(in.hours, c.train.train_fraction, c.train.val_fraction);
  const auto& times = which == "val" ? split.val : which == "train" ? split.train : split.test;
  const auto r = evaluate(m, in, times, c.train.seed, c.train.threshold);
  auto j = metrics_json(r.metrics, r.ece);
  j["variant"] = variant_label(m.variant);
  j["split"] = which;
  j["samples"] = r.labels.size();
  if (m.flags().mc) {
    double s = 0.0;
    for (double v : r.sigma) s += v;
    j["mc_passes"] = m.cfg.mc_passes;
    j["mean_sigma"] = s / static_cast<double>(r.sigma.size());
  }
  write_pair(fs::path(out) / "metrics", metrics_kv(r.metrics, r.ece), j);
  return 0;
}

int cmd_ablate(const Common& common, const std::string& data, const std::string& tiles, const std::string& regions,
               const std::string& out) {
  RunConfig c = common.load();
  c.validate();
  const auto l = load_data(data, tiles, regions);
  const auto in = prepare_inputs(l.ds, l.tiles, c.model);
  const auto split = chronological_split(in.hours, c.train.train_fraction, c.train.val_fraction);
  const auto a = ablate(in, c.model, split, c.train, common.progress());
  const fs::path dir(out);
  write_pair(dir / "ablation", ablation_table(a), ablation_json(a));
  nlohmann::ordered_json hist;
  for (std::size_t i = 0; i < a.rows.size(); ++i) {
    hist[variant_key(a.rows[i].variant)] = history_json(a.histories[i]);
    save_model(dir / "models" / (variant_key(a.rows[i].variant) + ".json"), a.models[i]);
  }
  write_text(dir / "histories.json", hist.dump(2) + "\n");
  std::cout << ablation_table(a);
  return 0;
}

int cmd_finetune(const Common& common, const std::string& data, const std::string& tiles, const std::string& region,
                 const std::string& model_path, const std::string& out) {
  RunConfig c = common.load();
  c.train.validate();
  const Model pre = load_model(model_path);
  const auto l = load_data(data, tiles, region);
  const auto in = prepare_inputs(l.ds, l.tiles, pre.cfg);
  const auto split = chronological_split(in.hours, c.train.train_fraction, c.train.val_fraction);
  const auto r = finetune(pre, in, split, c.train, common.progress());
  const fs::path dir(out);
  save_model(dir / "model.json", r.model);
  std::string text = "zero_shot\n" + metrics_kv(r.zero_shot.metrics, r.zero_shot.ece) + "finetuned\n" +
                     metrics_kv(r.tuned.metrics, r.tuned.ece) + "best_epoch=" + std::to_string(r.best_epoch) +
                     "\nfrozen_tensors_checked=" + std::to_string(r.diff.frozen_tensors) +
                     "\nchanged_frozen_tensors=" + std::to_string(r.diff.changed_frozen.size()) + "\nchanged:";
  for (const auto& n : r.diff.changed) text += " " + n;
  text += "\n";
  write_pair(dir / "finetune", text, finetune_json(r));
  std::cout << text;
  return 0;
}

int cmd_gradcheck(const std::string& out, std::uint64_t seed) {
  const auto rows = layer_gradcheck_suite(seed);
  const auto table = gradcheck_table(rows);
  std::cout << table;
  bool ok = true;
  if (!out.empty()) {
    nlohmann::ordered_json j = nlohmann::ordered_json::array();
    for (const auto& r : rows) j.push_back({{"op", r.op}, {"max_rel_error", r.max_rel_error}, {"pass", r.pass}});
    write_pair(out, table, j);
  }
  for (const auto& r : rows) ok = ok && r.pass;
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"accident-risk pipeline: synth, preprocess, train, eval, ablate, finetune, gradcheck"};
  app.require_subcommand(1);

  Common common;
  std::string out, data, tiles, regions, model, records, report, variant = "full", which = "test", region;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> mc_passes, min_records, knn_k;
  std::optional<double> min_complete;
  std::uint64_t gc_seed = 7;

  auto* synth = app.add_subcommand("synth", "generate a planted-structure dataset, tiles and manifest");
  common.attach(synth);
  synth->add_option("--out", out, "output directory")->required();

  auto* pre = app.add_subcommand("preprocess", "records -> filtered, windowed, imputed dataset");
  common.attach(pre);
  pre->add_option("--records", records, "records.jsonl")->required();
  pre->add_option("--out", out, "dataset file")->required();
  pre->add_option("--report", report, "report stem (writes .txt and .json)");
  pre->add_option("--min-records", min_records, "minimum records per cell (default 100)");
  pre->add_option("--min-complete", min_complete, "minimum complete-record ratio (default 0.95)");
  pre->add_option("--knn-k", knn_k, "neighbors for imputation (default 5)");

  auto data_opts = [&](CLI::App* a) {
    a->add_option("--data", data, "dataset file")->required();
    a->add_option("--tiles", tiles, "tile directory")->required();
  };

  auto* tr = app.add_subcommand("train", "train one variant");
  common.attach(tr);
  data_opts(tr);
  tr->add_option("--regions", regions, "comma-separated regions (default: all)");
  tr->add_option("--variant", variant, "baseline|local_gat|fusion|sparse_global|mc_dropout|adaptive_gating|full");
  tr->add_option("--seed", seed, "training seed (overrides train.seed)");
  tr->add_option("--out", out, "output directory")->required();

  auto* ev = app.add_subcommand("eval", "evaluate a saved model");
  common.attach(ev);
  data_opts(ev);
  ev->add_option("--regions", regions, "comma-separated regions (default: all)");
  ev->add_option("--model", model, "model.json")->required();
  ev->add_option("--mc-passes", mc_passes, "MC-dropout passes (MC variants)");
  ev->add_option("--split", which, "train|val|test")->check(CLI::IsMember({"train", "val", "test"}));
  ev->add_option("--out", out, "output directory")->required();

  auto* ab = app.add_subcommand("ablate", "train the six cumulative variants");
  common.attach(ab);
  data_opts(ab);
  ab->add_option("--regions", regions, "comma-separated regions (default: all)");
  ab->add_option("--out", out, "output directory")->required();

  auto* ft = app.add_subcommand("finetune", "adapt the final GAT layer and head to a new region");
  common.attach(ft);
  data_opts(ft);
  ft->add_option("--region", region, "target region")->required();
  ft->add_option("--model", model, "pretrained model.json")->required();
  ft->add_option("--out", out, "output directory")->required();

  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of every differentiable layer");
  gc->add_option("--out", out, "report stem (writes .txt and .json)");
  gc->add_option("--seed", gc_seed, "instance seed");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*synth) return cmd_synth(common, out);
    if (*pre) return cmd_preprocess(common, records, out, report, min_records, min_complete, knn_k);
    if (*tr) return cmd_train(common, data, tiles, regions, variant, seed, out);
    if (*ev) return cmd_eval(common, data, tiles, regions, model, mc_passes, which, out);
    if (*ab) return cmd_ablate(common, data, tiles, regions, out);
    if (*ft) return cmd_finetune(common, data, tiles, region, model, out);
    if (*gc) return cmd_gradcheck(out, gc_seed);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
