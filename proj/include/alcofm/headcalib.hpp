#pragma once

// Classification head, weighted loss, MC-dropout uncertainty and the metric
// suite (accuracy / precision / recall / F1 / ECE).

#include <cmath>
#include <cstdio>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "alcofm/layers.hpp"

namespace alcofm {

struct HeadConfig {
  std::size_t hidden = 16;
  double dropout = 0.2;
};

inline void add_head_params(ParamStore& s, std::size_t d, const HeadConfig& c, std::uint64_t seed) {
  add_linear(s, "head.l1", d, c.hidden, seed, true, std::sqrt(2.0));
  add_linear(s, "head.l2", c.hidden, 1, seed);
}

/// z: B x d -> B x 1 probabilities. Dropout sits after the hidden ReLU and is
/// applied only when `stochastic` is set (training or MC inference).
inline Var head_forward(Graph& g, const ParamStore& s, Var z, double p, DropoutKey key, bool stochastic) {
  Var h = relu(linear(g, s, "head.l1", z));
  h = dropout(h, p, key, stochastic);
  return sigmoid(linear(g, s, "head.l2", h));
}

struct ClassWeights {
  double w0 = 1.0;
  double w1 = 1.0;
};

/// w_c = n / (2 n_c).
inline ClassWeights class_weights_from(std::span<const int> labels) {
  std::size_t pos = 0;
  for (int y : labels) {
    if (y != 0 && y != 1) throw ValidationError("labels must be 0/1");
    pos += static_cast<std::size_t>(y);
  }
  const std::size_t n = labels.size(), neg = n - pos;
  if (pos == 0 || neg == 0) throw ValidationError("class weights need both classes present");
  return {static_cast<double>(n) / (2.0 * static_cast<double>(neg)),
          static_cast<double>(n) / (2.0 * static_cast<double>(pos))};
}

inline double weighted_bce(double y_hat, int y, const ClassWeights& w) {
  const double p = std::clamp(y_hat, kProbClamp, 1.0 - kProbClamp);
  return y == 1 ? -w.w1 * std::log(p) : -w.w0 * std::log(1.0 - p);
}

struct Prediction {
  double y_hat = 0.0;
  double sigma = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
};

/// Mean, population std and the 1.96-sigma interval of K pass outputs.
inline Prediction prediction_from_passes(std::span<const double> passes) {
  if (passes.empty()) throw ValidationError("need at least one pass");
  const double K = static_cast<double>(passes.size());
  double m = 0.0;
  for (double v : passes) m += v;
  m /= K;
  double var = 0.0;
  for (double v : passes) var += (v - m) * (v - m);
  const double sd = std::sqrt(var / K);
  return {m, sd, m - 1.96 * sd, m + 1.96 * sd};
}

/// Dropout stream of MC pass k.
inline DropoutKey mc_key(std::uint64_t seed, std::size_t pass) { return {seed, stream_id("mc") + pass}; }

/// K stochastic head passes over every row of z (B x d); row b's prediction
/// uses the rows of each pass mask that belong to it.
inline std::vector<Prediction> mc_dropout_predict_batch(const Tensor& z, const ParamStore& s, const HeadConfig& c,
                                                        std::size_t K, std::uint64_t seed) {
  if (K == 0) throw ValidationError("MC dropout needs K >= 1");
  std::vector<std::vector<double>> passes(z.rows(), std::vector<double>(K));
  for (std::size_t k = 0; k < K; ++k) {
    Graph g(false);
    const Tensor& y = head_forward(g, s, g.constant(z), c.dropout, mc_key(seed, k), true).value();
    for (std::size_t b = 0; b < z.rows(); ++b) passes[b][k] = y[b];
  }
  std::vector<Prediction> out;
  out.reserve(z.rows());
  for (const auto& p : passes) out.push_back(prediction_from_passes(p));
  return out;
}

inline Prediction mc_dropout_predict(const Tensor& z, const ParamStore& s, const HeadConfig& c, std::size_t K,
                                     std::uint64_t seed) {
  if (z.rows() != 1) throw ShapeError("mc_dropout_predict takes a single embedding row");
  return mc_dropout_predict_batch(z, s, c, K, seed).front();
}

/// Equal-width bins over [0, 1]; the top bin includes 1.0.
inline double ece(std::span<const double> preds, std::span<const int> labels, std::size_t bins = 10) {
  if (preds.size() != labels.size()) throw ValidationError("ece: length mismatch");
  if (preds.empty()) throw ValidationError("ece: no predictions");
  if (bins == 0) throw ValidationError("ece: bins must be positive");
  std::vector<double> conf(bins, 0.0), pos(bins, 0.0), cnt(bins, 0.0);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const double p = std::clamp(preds[i], 0.0, 1.0);
    const auto b = std::min(static_cast<std::size_t>(p * static_cast<double>(bins)), bins - 1);
    conf[b] += p;
    pos[b] += labels[i];
    cnt[b] += 1.0;
  }
  double e = 0.0;
  for (std::size_t b = 0; b < bins; ++b)
    if (cnt[b] > 0) e += cnt[b] / static_cast<double>(preds.size()) * std::abs(pos[b] / cnt[b] - conf[b] / cnt[b]);
  return e;
}

struct Metrics {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
};

/// Harmonic mean; 0 when both inputs are 0.
inline double f1_from(double precision, double recall) {
  return precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
}

/// Positive iff y_hat >= threshold. Undefined ratios are reported as 0.
inline Metrics metrics(std::span<const double> preds, std::span<const int> labels, double threshold = 0.5) {
  if (preds.empty() || preds.size() != labels.size()) throw ValidationError("metrics: empty or mismatched input");
  if (!(threshold > 0.0 && threshold < 1.0)) throw ValidationError("metrics: threshold must lie in (0, 1)");
  Metrics m;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const bool p = preds[i] >= threshold;
    const bool y = labels[i] == 1;
    if (p && y) ++m.tp;
    else if (p) ++m.fp;
    else if (y) ++m.fn;
    else ++m.tn;
  }
  const auto n = static_cast<double>(preds.size());
  m.accuracy = static_cast<double>(m.tp + m.tn) / n;
  m.precision = m.tp + m.fp ? static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fp) : 0.0;
  m.recall = m.tp + m.fn ? static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fn) : 0.0;
  m.f1 = f1_from(m.precision, m.recall);
  return m;
}

// ---------------------------------------------------------------------------
// Output formatting. Reals are printed with %.6f so golden files are stable.

inline std::string fmt_real(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

inline std::string metrics_kv(const Metrics& m, double ece_value) {
  std::string s;
  s += "accuracy=" + fmt_real(m.accuracy) + "\n";
  s += "precision=" + fmt_real(m.precision) + "\n";
  s += "recall=" + fmt_real(m.recall) + "\n";
  s += "f1=" + fmt_real(m.f1) + "\n";
  s += "ece=" + fmt_real(ece_value) + "\n";
  s += "tp=" + std::to_string(m.tp) + "\nfp=" + std::to_string(m.fp) + "\nfn=" + std::to_string(m.fn) +
       "\ntn=" + std::to_string(m.tn) + "\n";
  return s;
}

inline nlohmann::ordered_json metrics_json(const Metrics& m, double ece_value) {
  nlohmann::ordered_json j;
  j["accuracy"] = m.accuracy;
  j["precision"] = m.precision;
  j["recall"] = m.recall;
  j["f1"] = m.f1;
  j["ece"] = ece_value;
  j["tp"] = m.tp;
  j["fp"] = m.fp;
  j["fn"] = m.fn;
  j["tn"] = m.tn;
  return j;
}

}  // namespace alcofm
