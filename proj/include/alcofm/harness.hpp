#pragma once

// Training, evaluation, the cumulative ablation and the transfer protocol.

#include <cstring>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "alcofm/model.hpp"

namespace alcofm {

struct TrainConfig {
  std::size_t epochs = 40;
  std::size_t batch_windows = 8;    // time windows per step (times all nodes)
  std::size_t steps_per_epoch = 0;  // 0: one pass over the training hours
  std::size_t val_stride = 1;       // evaluate every k-th validation hour during training
  double lr_numeric = 7.5e-4;
  double lr_visual = 1.5e-5;
  double lr_other = 7.5e-4;
  double weight_decay = 1e-4;
  double threshold = 0.5;
  double train_fraction = 0.7;
  double val_fraction = 0.15;
  std::size_t finetune_epochs = 5;
  std::size_t finetune_patience = 2;
  std::uint64_t seed = 1;

  void validate() const {
    if (epochs == 0) throw ValidationError("epochs must be >= 1");
    if (batch_windows == 0 || val_stride == 0) throw ValidationError("batch_windows and val_stride must be >= 1");
    if (!(lr_numeric > 0 && lr_visual > 0 && lr_other > 0)) throw ValidationError("learning rates must be positive");
    if (weight_decay < 0) throw ValidationError("weight_decay must be non-negative");
    if (!(threshold > 0 && threshold < 1)) throw ValidationError("threshold must lie in (0, 1)");
    if (!(train_fraction > 0 && val_fraction > 0 && train_fraction + val_fraction < 1))
      throw ValidationError("split fractions must leave a test split");
  }

  double lr_for(const std::string& name) const {
    if (name.rfind("enc.num.", 0) == 0) return lr_numeric;
    if (name.rfind("enc.vis.", 0) == 0) return lr_visual;
    return lr_other;
  }
};

/// Chronological split of the usable hours (those with a full 6-hour history).
struct Split {
  std::vector<std::size_t> train, val, test;
};

inline Split chronological_split(std::size_t hours, double train_fraction = 0.7, double val_fraction = 0.15) {
  const auto train_end = train_slots(hours, train_fraction);
  const auto val_end = train_slots(hours, train_fraction + val_fraction);
  if (train_end <= kMaxWindow || val_end <= train_end || val_end >= hours) throw ValidationError("too few hours to split");
  Split s;
  for (std::size_t t = kMaxWindow - 1; t < hours; ++t) (t < train_end ? s.train : t < val_end ? s.val : s.test).push_back(t);
  return s;
}

inline std::vector<std::size_t> strided(const std::vector<std::size_t>& v, std::size_t stride) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < v.size(); i += stride) out.push_back(v[i]);
  return out;
}

inline std::vector<int> labels_at(const ModelInputs& in, const std::vector<std::size_t>& times) {
  std::vector<int> y;
  y.reserve(times.size() * in.node_count());
  for (auto t : times)
    for (std::size_t n = 0; n < in.node_count(); ++n) y.push_back(in.label(n, t));
  return y;
}

// ---------------------------------------------------------------------------
// Evaluation

struct EvalResult {
  Metrics metrics;
  double ece = 0.0;
  std::vector<double> y_hat;  // times x N
  std::vector<double> sigma;  // zeros unless MC dropout is on
  std::vector<int> labels;
  std::vector<std::size_t> windows;
};

inline constexpr std::size_t kEvalChunk = 16;

/// Pre-head embeddings for every (time, node), row-major times x N.
inline Tensor embeddings(const Model& m, const ModelInputs& in, const std::vector<std::size_t>& times,
                         const std::vector<std::size_t>& windows) {
  const std::size_t N = in.node_count();
  Tensor z(times.size() * N, m.cfg.enc.d);
  for (std::size_t t0 = 0; t0 < times.size(); t0 += kEvalChunk) {
    const std::size_t nt = std::min(kEvalChunk, times.size() - t0);
    std::vector<std::size_t> tt(times.begin() + static_cast<std::ptrdiff_t>(t0),
                                times.begin() + static_cast<std::ptrdiff_t>(t0 + nt));
    std::vector<std::size_t> ww(windows.begin() + static_cast<std::ptrdiff_t>(t0 * N),
                                windows.begin() + static_cast<std::ptrdiff_t>((t0 + nt) * N));
    Graph g(false);
    const Tensor& part = embed(g, m, in, tt, ww).value();
    std::copy(part.data().begin(), part.data().end(), z.data().begin() + static_cast<std::ptrdiff_t>(t0 * N * z.cols()));
  }
  return z;
}

inline std::uint64_t mc_seed(std::uint64_t seed) { return splitmix64(seed ^ stream_id("mc-dropout")); }

/// Head predictions from embeddings: K-pass MC dropout when the variant has
/// it, one deterministic pass otherwise.
inline void predict_head(const Model& m, const Tensor& z, std::uint64_t seed, EvalResult& r) {
  if (m.flags().mc) {
    const auto preds = mc_dropout_predict_batch(z, m.params, m.cfg.head, m.cfg.mc_passes, mc_seed(seed));
    for (const auto& p : preds) {
      r.y_hat.push_back(p.y_hat);
      r.sigma.push_back(p.sigma);
    }
  } else {
    Graph g(false);
    const Tensor& y = head_forward(g, m.params, g.constant(z), m.cfg.head.dropout, {}, false).value();
    r.y_hat.assign(y.data().begin(), y.data().end());
    r.sigma.assign(y.size(), 0.0);
  }
}

inline void score(EvalResult& r, double threshold) {
  r.metrics = metrics(r.y_hat, r.labels, threshold);
  r.ece = ece(r.y_hat, r.labels);
}

inline std::vector<std::size_t> eval_windows(const Model& m, const ModelInputs& in, const std::vector<std::size_t>& times) {
  if (m.flags().gating) return gate_windows(volatility_scores(m, in, times), m.gate);
  return std::vector<std::size_t>(times.size() * in.node_count(), m.cfg.fixed_window);
}

inline EvalResult evaluate(const Model& m, const ModelInputs& in, const std::vector<std::size_t>& times,
                           std::uint64_t seed, double threshold = 0.5) {
  EvalResult r;
  r.windows = eval_windows(m, in, times);
  r.labels = labels_at(in, times);
  predict_head(m, embeddings(m, in, times, r.windows), seed, r);
  score(r, threshold);
  return r;
}

inline GateThresholds fit_gate(const Model& m, const ModelInputs& in, const std::vector<std::size_t>& train_times,
                               int low_pct, int high_pct) {
  return fit_thresholds(volatility_scores(m, in, train_times), low_pct, high_pct);
}

// ---------------------------------------------------------------------------
// Training

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_f1 = 0.0;
  double val_ece = 0.0;
};

struct TrainResult {
  Model model;  // best-validation-F1 checkpoint
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  double best_val_f1 = -1.0;
  ClassWeights weights;
};

using ProgressFn = std::function<void(const std::string&)>;

/// One optimizer step on the given times; returns the batch loss.
inline double train_step(Model& m, const ModelInputs& in, AdamW& opt, const TrainConfig& cfg, const ClassWeights& cw,
                         const std::vector<std::size_t>& times, const std::vector<std::size_t>& windows,
                         std::uint64_t step) {
  Graph g;
  Var z = embed(g, m, in, times, windows);
  Var p = head_forward(g, m.params, z, m.cfg.head.dropout, {cfg.seed, stream_id("train-dropout") + step}, true);
  const auto y = labels_at(in, times);
  Var loss = weighted_bce_mean(p, std::vector<double>(y.begin(), y.end()), cw.w0, cw.w1);
  const double value = loss.value()[0];
  if (!std::isfinite(value))
    throw NumericError("non-finite training loss at step " + std::to_string(step) + " (variant " +
                       variant_key(m.variant) + ")");
  g.backward(loss);
  m.params.zero_grad();
  g.accumulate_param_grads(m.params);
  opt.step(m.params, [&](const std::string& n) { return cfg.lr_for(n); });
  return value;
}

/// Draws a batch of training times and, for gated models, one window length
/// shared by the batch.
struct BatchSampler {
  CounterRng rng;
  const std::vector<std::size_t>& pool;
  std::size_t batch;

  std::vector<std::size_t> times() {
    std::vector<std::size_t> t(batch);
    for (auto& v : t) v = pool[rng.below(pool.size())];
    return t;
  }
  std::size_t window() { return kWindowChoices[rng.below(kWindowChoices.size())]; }
};

inline std::size_t steps_per_epoch(const TrainConfig& cfg, std::size_t train_hours) {
  return cfg.steps_per_epoch ? cfg.steps_per_epoch : (train_hours + cfg.batch_windows - 1) / cfg.batch_windows;
}

inline TrainResult train(const ModelInputs& in, Model m, const Split& split, const TrainConfig& cfg,
                         const ProgressFn& progress = nullptr) {
  cfg.validate();
  const auto f = m.flags();
  TrainResult res;
  res.weights = class_weights_from(labels_at(in, split.train));
  AdamW opt(AdamWConfig{0.9, 0.999, 1e-8, cfg.weight_decay});
  BatchSampler sampler{CounterRng(cfg.seed, stream_id("train-batches")), split.train, cfg.batch_windows};
  const auto val_times = strided(split.val, cfg.val_stride);
  const std::size_t N = in.node_count();
  const std::size_t steps = steps_per_epoch(cfg, split.train.size());
  std::uint64_t step = 0;
  for (std::size_t e = 1; e <= cfg.epochs; ++e) {
    double loss = 0.0;
    for (std::size_t s = 0; s < steps; ++s, ++step) {
      const auto times = sampler.times();
      const std::size_t w = f.gating ? sampler.window() : m.cfg.fixed_window;
      loss += train_step(m, in, opt, cfg, res.weights, times, std::vector<std::size_t>(times.size() * N, w), step);
    }
    if (f.gating) m.gate = fit_gate(m, in, split.train, m.cfg.gate_low_pct, m.cfg.gate_high_pct);
    const auto ev = evaluate(m, in, val_times, cfg.seed, cfg.threshold);
    res.history.push_back({e, loss / static_cast<double>(steps), ev.metrics.f1, ev.ece});
    if (ev.metrics.f1 > res.best_val_f1) {
      res.best_val_f1 = ev.metrics.f1;
      res.best_epoch = e;
      res.model = m;
    }
    if (progress) {
      std::ostringstream os;
      os << variant_key(m.variant) << " epoch " << e << " loss " << fmt_real(res.history.back().train_loss)
         << " val_f1 " << fmt_real(ev.metrics.f1) << " val_ece " << fmt_real(ev.ece);
      progress(os.str());
    }
  }
  return res;
}

// ---------------------------------------------------------------------------
// Gate threshold grid search

struct GateChoice {
  int low_pct = 33;
  int high_pct = 67;
  GateThresholds thresholds;
  double val_f1 = 0.0;
  double val_ece = 0.0;
};

inline constexpr std::array<int, 5> kGateOffsets{-10, -5, 0, 5, 10};

/// Per-w fused embeddings are cached once; each candidate only re-runs the
/// graph layers and head with the per-node window it implies.
inline GateChoice search_gate(Model& m, const ModelInputs& in, const Split& split, const TrainConfig& cfg) {
  const std::size_t N = in.node_count();
  const auto val_times = strided(split.val, cfg.val_stride);
  const auto u_train = volatility_scores(m, in, split.train);
  const auto u_val = volatility_scores(m, in, val_times);
  const auto labels = labels_at(in, val_times);

  // cache[k]: fused rows (x_num | x_vis) for all val samples at window kWindowChoices[k].
  std::array<Tensor, kWindowChoices.size()> cache;
  for (std::size_t k = 0; k < kWindowChoices.size(); ++k) {
    cache[k] = Tensor(val_times.size() * N, 2 * m.cfg.enc.d);
    for (std::size_t t0 = 0; t0 < val_times.size(); t0 += kEvalChunk) {
      const std::size_t nt = std::min(kEvalChunk, val_times.size() - t0);
      std::vector<std::size_t> tt(val_times.begin() + static_cast<std::ptrdiff_t>(t0),
                                  val_times.begin() + static_cast<std::ptrdiff_t>(t0 + nt));
      Graph g(false);
      Var vis_all = encode_all_tiles(g, m, in);
      auto fr = fused_embeddings(g, m, in, tt, std::vector<std::size_t>(nt * N, kWindowChoices[k]), vis_all);
      const Tensor& x = concat_cols({fr.x_num, fr.x_vis}).value();
      std::copy(x.data().begin(), x.data().end(),
                cache[k].data().begin() + static_cast<std::ptrdiff_t>(t0 * N * x.cols()));
    }
  }

  GateChoice best;
  bool have = false;
  const std::size_t d = m.cfg.enc.d;
  for (int dl : kGateOffsets)
    for (int dh : kGateOffsets) {
      GateChoice c;
      c.low_pct = m.cfg.gate_low_pct + dl;
      c.high_pct = m.cfg.gate_high_pct + dh;
      c.thresholds = fit_thresholds(u_train, c.low_pct, c.high_pct);
      const auto w = gate_windows(u_val, c.thresholds);
      Tensor z(val_times.size() * N, d);
      for (std::size_t t0 = 0; t0 < val_times.size(); t0 += kEvalChunk) {
        const std::size_t nt = std::min(kEvalChunk, val_times.size() - t0);
        Tensor xn(nt * N, d), xv(nt * N, d);
        for (std::size_t i = 0; i < nt * N; ++i) {
          const std::size_t row = t0 * N + i;
          const std::size_t k = w[row] == 1 ? 0 : w[row] == 3 ? 1 : 2;
          for (std::size_t j = 0; j < d; ++j) {
            xn(i, j) = cache[k](row, j);
            xv(i, j) = cache[k](row, d + j);
          }
        }
        Graph g(false);
        const Tensor& part = graph_embeddings(g, m, in, g.constant(xn), g.constant(xv)).value();
        std::copy(part.data().begin(), part.data().end(), z.data().begin() + static_cast<std::ptrdiff_t>(t0 * N * d));
      }
      EvalResult r;
      r.labels = labels;
      predict_head(m, z, cfg.seed, r);
      score(r, cfg.threshold);
      c.val_f1 = r.metrics.f1;
      c.val_ece = r.ece;
      if (!have || c.val_f1 > best.val_f1 || (c.val_f1 == best.val_f1 && c.val_ece < best.val_ece)) {
        best = c;
        have = true;
      }
    }
  m.gate = best.thresholds;
  return best;
}

// ---------------------------------------------------------------------------
// Ablation

struct AblationRow {
  Variant variant = Variant::Baseline;
  Metrics test;
  double test_ece = 0.0;
  double val_f1 = 0.0;
  std::size_t best_epoch = 0;
  std::optional<GateChoice> gate;
};

struct AblationResult {
  std::vector<AblationRow> rows;
  std::vector<Model> models;  // one per row
  std::vector<std::vector<EpochRecord>> histories;
};

/// Trains the cumulative variants. The MC-dropout row reuses the
/// sparse-global training run (the variants differ only at inference).
inline AblationResult ablate(const ModelInputs& in, const ModelConfig& mc, const Split& split, const TrainConfig& cfg,
                             const ProgressFn& progress = nullptr) {
  AblationResult out;
  std::optional<TrainResult> sparse_run;
  for (auto v : kAllVariants) {
    TrainResult tr;
    if (v == Variant::PlusMCDropout && sparse_run) {
      tr = *sparse_run;
      tr.model.variant = v;
    } else {
      tr = train(in, make_model(mc, v, cfg.seed), split, cfg, progress);
      if (v == Variant::PlusSparseGlobal) sparse_run = tr;
    }
    AblationRow row;
    row.variant = v;
    row.best_epoch = tr.best_epoch;
    if (flags_of(v).gating) row.gate = search_gate(tr.model, in, split, cfg);
    const auto val = evaluate(tr.model, in, strided(split.val, cfg.val_stride), cfg.seed, cfg.threshold);
    row.val_f1 = val.metrics.f1;
    const auto test = evaluate(tr.model, in, split.test, cfg.seed, cfg.threshold);
    row.test = test.metrics;
    row.test_ece = test.ece;
    if (progress)
      progress(variant_label(v) + " test_f1 " + fmt_real(row.test.f1) + " test_ece " + fmt_real(row.test_ece));
    out.rows.push_back(row);
    out.models.push_back(tr.model);
    out.histories.push_back(tr.history);
  }
  return out;
}

inline std::string ablation_table(const AblationResult& a) {
  std::ostringstream os;
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-16s %9s %9s %9s %9s %9s %6s\n", "variant", "f1", "ece", "precision", "recall",
                "accuracy", "epoch");
  os << buf;
  for (const auto& r : a.rows) {
    std::snprintf(buf, sizeof buf, "%-16s %9.6f %9.6f %9.6f %9.6f %9.6f %6zu\n", variant_label(r.variant).c_str(),
                  r.test.f1, r.test_ece, r.test.precision, r.test.recall, r.test.accuracy, r.best_epoch);
    os << buf;
  }
  return os.str();
}

inline nlohmann::ordered_json ablation_json(const AblationResult& a) {
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (const auto& r : a.rows) {
    nlohmann::ordered_json j;
    j["variant"] = variant_label(r.variant);
    j["test"] = metrics_json(r.test, r.test_ece);
    j["val_f1"] = r.val_f1;
    j["best_epoch"] = r.best_epoch;
    if (r.gate)
      j["gate"] = {{"low_pct", r.gate->low_pct},          {"high_pct", r.gate->high_pct},
                   {"tau_low", r.gate->thresholds.tau_low}, {"tau_high", r.gate->thresholds.tau_high},
                   {"val_f1", r.gate->val_f1},            {"val_ece", r.gate->val_ece}};
    rows.push_back(j);
  }
  return rows;
}

inline nlohmann::ordered_json history_json(const std::vector<EpochRecord>& h) {
  nlohmann::ordered_json a = nlohmann::ordered_json::array();
  for (const auto& e : h)
    a.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_f1", e.val_f1}, {"val_ece", e.val_ece}});
  return a;
}

// ---------------------------------------------------------------------------
// Transfer protocol

struct FrozenDiff {
  std::vector<std::string> changed;         // every tensor whose bytes differ
  std::vector<std::string> changed_frozen;  // the subset outside the trainable set
  std::size_t frozen_tensors = 0;

  bool ok() const { return changed_frozen.empty(); }
};

inline bool bytes_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(double)) == 0;
}

inline FrozenDiff frozen_diff(const ParamStore& before, const ParamStore& after, const std::vector<std::string>& trainable) {
  FrozenDiff d;
  for (const auto& name : before.names()) {
    bool tr = false;
    for (const auto& p : trainable) tr = tr || name.rfind(p, 0) == 0;
    if (!tr) ++d.frozen_tensors;
    if (!after.contains(name) || !bytes_equal(before.value(name), after.value(name))) {
      d.changed.push_back(name);
      if (!tr) d.changed_frozen.push_back(name);
    }
  }
  return d;
}

struct FinetuneResult {
  Model model;
  EvalResult zero_shot;  // pretrained model on the target test split
  EvalResult tuned;      // selected checkpoint on the target test split
  double zero_shot_val_f1 = 0.0;
  double best_val_f1 = 0.0;
  std::size_t best_epoch = 0;  // 0: the pretrained weights were kept
  std::vector<EpochRecord> history;
  FrozenDiff diff;
};

/// Updates only the final GAT layer and the head on the target region, with
/// early stopping on validation F1. The untouched pretrained model is the
/// epoch-0 candidate. Throws if any frozen tensor changed.
inline FinetuneResult finetune(const Model& pretrained, const ModelInputs& in, const Split& split, const TrainConfig& cfg,
                               const ProgressFn& progress = nullptr) {
  cfg.validate();
  if (!pretrained.flags().gat) throw ValidationError("fine-tuning needs a model with a GAT layer");
  const auto prefixes = finetune_prefixes();
  const auto val_times = strided(split.val, cfg.val_stride);
  FinetuneResult res;
  res.zero_shot = evaluate(pretrained, in, split.test, cfg.seed, cfg.threshold);
  res.zero_shot_val_f1 = evaluate(pretrained, in, val_times, cfg.seed, cfg.threshold).metrics.f1;
  res.best_val_f1 = res.zero_shot_val_f1;
  res.model = pretrained;

  Model m = pretrained;
  m.params.train_only(prefixes);
  const ClassWeights cw = class_weights_from(labels_at(in, split.train));
  AdamW opt(AdamWConfig{0.9, 0.999, 1e-8, cfg.weight_decay});
  BatchSampler sampler{CounterRng(cfg.seed, stream_id("finetune-batches")), split.train, cfg.batch_windows};
  const std::size_t N = in.node_count();
  const std::size_t steps = steps_per_epoch(cfg, split.train.size());
  std::size_t since_best = 0;
  std::uint64_t step = 0;
  for (std::size_t e = 1; e <= cfg.finetune_epochs; ++e) {
    double loss = 0.0;
    for (std::size_t s = 0; s < steps; ++s, ++step) {
      const auto times = sampler.times();
      const std::size_t w = m.flags().gating ? sampler.window() : m.cfg.fixed_window;
      loss += train_step(m, in, opt, cfg, cw, times, std::vector<std::size_t>(times.size() * N, w), step);
    }
    const auto ev = evaluate(m, in, val_times, cfg.seed, cfg.threshold);
    res.history.push_back({e, loss / static_cast<double>(steps), ev.metrics.f1, ev.ece});
    if (progress) progress("finetune epoch " + std::to_string(e) + " val_f1 " + fmt_real(ev.metrics.f1));
    if (ev.metrics.f1 > res.best_val_f1) {
      res.best_val_f1 = ev.metrics.f1;
      res.best_epoch = e;
      res.model = m;
      since_best = 0;
    } else if (++since_best >= cfg.finetune_patience) {
      break;
    }
  }
  res.model.params.freeze_all(false);
  res.diff = frozen_diff(pretrained.params, res.model.params, prefixes);
  if (!res.diff.ok()) throw std::runtime_error("fine-tuning changed frozen parameter " + res.diff.changed_frozen.front());
  res.tuned = evaluate(res.model, in, split.test, cfg.seed, cfg.threshold);
  return res;
}

inline nlohmann::ordered_json finetune_json(const FinetuneResult& r) {
  nlohmann::ordered_json j;
  j["zero_shot_test"] = metrics_json(r.zero_shot.metrics, r.zero_shot.ece);
  j["finetuned_test"] = metrics_json(r.tuned.metrics, r.tuned.ece);
  j["zero_shot_val_f1"] = r.zero_shot_val_f1;
  j["best_val_f1"] = r.best_val_f1;
  j["best_epoch"] = r.best_epoch;
  j["history"] = history_json(r.history);
  j["frozen_tensors_checked"] = r.diff.frozen_tensors;
  j["changed_tensors"] = r.diff.changed;
  j["changed_frozen_tensors"] = r.diff.changed_frozen;
  return j;
}

}  // namespace alcofm
