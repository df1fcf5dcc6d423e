#pragma once

// Named parameter storage with per-tensor freeze flags and gradient
// accumulators, plus the adaptive-moment optimizer with decoupled decay.

#include <cmath>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "alcofm/tensor.hpp"

namespace alcofm {

class ParamStore {
 public:
  /// Adds a parameter; names are unique.
  void add(const std::string& name, Tensor value, bool trainable = true) {
    if (entries_.count(name)) throw ValidationError("duplicate parameter " + name);
    Entry e;
    e.grad = Tensor(value.rows(), value.cols());
    e.value = std::move(value);
    e.trainable = trainable;
    entries_.emplace(name, std::move(e));
  }

  bool contains(const std::string& name) const { return entries_.count(name) != 0; }

  const Tensor& value(const std::string& name) const { return at(name).value; }
  Tensor& mutable_value(const std::string& name) { return at(name).value; }

  bool trainable(const std::string& name) const { return at(name).trainable; }
  void set_trainable(const std::string& name, bool t) { at(name).trainable = t; }

  /// Freezes everything, then unfreezes parameters whose name starts with any prefix.
  void train_only(const std::vector<std::string>& prefixes) {
    for (auto& [name, e] : entries_) {
      e.trainable = false;
      for (const auto& p : prefixes)
        if (name.rfind(p, 0) == 0) e.trainable = true;
    }
  }

  void freeze_all(bool frozen = true) {
    for (auto& [_, e] : entries_) e.trainable = !frozen;
  }

  const Tensor& grad(const std::string& name) const { return at(name).grad; }

  /// Frozen parameters keep an all-zero gradient slot.
  void accumulate_grad(const std::string& name, const Tensor& g) {
    auto& e = at(name);
    if (!e.trainable) return;
    add_inplace(e.grad, g);
  }

  void scale_grads(double s) {
    for (auto& [_, e] : entries_)
      for (auto& v : e.grad.data()) v *= s;
  }

  void zero_grad() {
    for (auto& [_, e] : entries_) e.grad.fill(0.0);
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& [name, _] : entries_) out.push_back(name);
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [_, e] : entries_) n += e.value.size();
    return n;
  }

  nlohmann::json to_json() const {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [name, e] : entries_) {
      j[name] = {{"rows", e.value.rows()},
                 {"cols", e.value.cols()},
                 {"trainable", e.trainable},
                 {"data", e.value.storage()}};
    }
    return j;
  }

  static ParamStore from_json(const nlohmann::json& j) {
    ParamStore s;
    for (auto it = j.begin(); it != j.end(); ++it) {
      const auto& v = it.value();
      s.add(it.key(),
            Tensor(v.at("rows").get<std::size_t>(), v.at("cols").get<std::size_t>(),
                   v.at("data").get<std::vector<double>>()),
            v.at("trainable").get<bool>());
    }
    return s;
  }

 private:
  struct Entry {
    Tensor value;
    Tensor grad;
    bool trainable = true;
  };

  Entry& at(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ValidationError("unknown parameter " + name);
    return it->second;
  }
  const Entry& at(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ValidationError("unknown parameter " + name);
    return it->second;
  }

  std::map<std::string, Entry> entries_;
};

/// Gaussian init with std = gain / sqrt(fan_in); the stream is keyed by name
/// so adding or removing other parameters never shifts this one.
inline Tensor init_normal(std::size_t rows, std::size_t cols, double gain, std::uint64_t seed,
                          const std::string& name) {
  Tensor t(rows, cols);
  CounterRng rng(seed, stream_id(name));
  const double sd = gain / std::sqrt(static_cast<double>(rows));
  for (auto& v : t.data()) v = sd * rng.normal();
  return t;
}

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
};

/// Adaptive-moment steps with decoupled weight decay. Learning rates are
/// routed per parameter by a caller-supplied function of the name.
class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}

  template <typename LrFn>
  void step(ParamStore& store, LrFn&& lr_for) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (const auto& name : store.names()) {
      if (!store.trainable(name)) continue;
      Tensor& p = store.mutable_value(name);
      const Tensor& g = store.grad(name);
      auto [it, inserted] = moments_.try_emplace(name);
      if (inserted) {
        it->second.first = Tensor(p.rows(), p.cols());
        it->second.second = Tensor(p.rows(), p.cols());
      }
      Tensor& m = it->second.first;
      Tensor& v = it->second.second;
      const double lr = lr_for(name);
      for (std::size_t i = 0; i < p.size(); ++i) {
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        p[i] -= lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * p[i]);
      }
    }
  }

  std::size_t steps() const { return t_; }

 private:
  AdamWConfig cfg_;
  std::size_t t_ = 0;
  std::map<std::string, std::pair<Tensor, Tensor>> moments_;
};

}  // namespace alcofm
