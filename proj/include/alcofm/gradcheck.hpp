#pragma once

// Central finite-difference verification of the analytic gradients.

#include <functional>
#include <span>
#include <vector>

#include "alcofm/autodiff.hpp"

namespace alcofm {

/// Builds a scalar on `g` from leaf variables bound to the inputs.
using ScalarFn = std::function<Var(Graph&, std::span<const Var>)>;

/// Builds a scalar on `g` from parameters of `store`.
using ParamScalarFn = std::function<Var(Graph&, const ParamStore&)>;

namespace detail {

inline void check_eps(double eps) {
  if (!(eps >= 1e-7 && eps <= 1e-4)) throw ValidationError("grad_check step must lie in [1e-7, 1e-4]");
}

inline double rel_error(double analytic, double numeric) {
  if (!std::isfinite(analytic) || !std::isfinite(numeric)) throw NumericError("non-finite value in gradient check");
  return std::abs(analytic - numeric) / std::max({1.0, std::abs(analytic), std::abs(numeric)});
}

inline double eval_scalar(const ScalarFn& f, const std::vector<Tensor>& inputs) {
  Graph g(false);
  std::vector<Var> vars;
  for (const auto& t : inputs) vars.push_back(g.constant(t));
  const double v = f(g, vars).value()[0];
  if (!std::isfinite(v)) throw NumericError("non-finite objective in gradient check");
  return v;
}

}  // namespace detail

/// Max over all input coordinates of |analytic - numeric| / max(1, |analytic|, |numeric|).
inline double grad_check(const ScalarFn& f, const std::vector<Tensor>& inputs, double eps = 1e-6) {
  detail::check_eps(eps);
  Graph g;
  std::vector<Var> vars;
  for (const auto& t : inputs) vars.push_back(g.variable(t));
  Var out = f(g, vars);
  if (out.value().size() != 1) throw ShapeError("grad_check objective must be scalar");
  g.backward(out);

  double worst = 0.0;
  std::vector<Tensor> probe = inputs;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Tensor analytic = g.grad(vars[k]);
    for (std::size_t i = 0; i < probe[k].size(); ++i) {
      const double x0 = probe[k][i];
      probe[k][i] = x0 + eps;
      const double fp = detail::eval_scalar(f, probe);
      probe[k][i] = x0 - eps;
      const double fm = detail::eval_scalar(f, probe);
      probe[k][i] = x0;
      worst = std::max(worst, detail::rel_error(analytic[i], (fp - fm) / (2.0 * eps)));
    }
  }
  return worst;
}

/// Same check over every trainable parameter of `store`. The store's gradient
/// slots are left holding the analytic gradient, so frozen slots can be
/// inspected afterwards (they stay zero).
inline double grad_check_params(const ParamScalarFn& f, ParamStore& store, double eps = 1e-6) {
  detail::check_eps(eps);
  store.zero_grad();
  {
    Graph g;
    Var out = f(g, store);
    if (out.value().size() != 1) throw ShapeError("grad_check objective must be scalar");
    g.backward(out);
    g.accumulate_param_grads(store);
  }
  auto eval = [&] {
    Graph g(false);
    const double v = f(g, store).value()[0];
    if (!std::isfinite(v)) throw NumericError("non-finite objective in gradient check");
    return v;
  };
  double worst = 0.0;
  for (const auto& name : store.names()) {
    if (!store.trainable(name)) continue;
    Tensor& p = store.mutable_value(name);
    const Tensor analytic = store.grad(name);
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double x0 = p[i];
      p[i] = x0 + eps;
      const double fp = eval();
      p[i] = x0 - eps;
      const double fm = eval();
      p[i] = x0;
      worst = std::max(worst, detail::rel_error(analytic[i], (fp - fm) / (2.0 * eps)));
    }
  }
  return worst;
}

}  // namespace alcofm
