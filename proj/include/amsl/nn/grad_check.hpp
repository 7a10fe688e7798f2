#pragma once

// Central finite-difference gradient verification.

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "amsl/error.hpp"
#include "amsl/nn/layers.hpp"
#include "amsl/rng.hpp"

namespace amsl::nn {

struct GradCheckResult {
  bool pass = false;
  double max_rel_error = 0.0;
  std::string worst;  ///< which tensor/element produced the maximum
};

/// |a - n| / max(|a|, |n|, floor); the floor keeps exact zeros from dividing by 0.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Central differences of `loss` w.r.t. each element of `x` (restored afterwards).
template <class T>
std::vector<double> numeric_gradient(const std::function<double()>& loss, std::span<T> x, double eps) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T saved = x[i];
    x[i] = static_cast<T>(saved + eps);
    const double up = loss();
    x[i] = static_cast<T>(saved - eps);
    const double down = loss();
    x[i] = saved;
    g[i] = (up - down) / (2.0 * eps);
  }
  return g;
}

template <class T>
double max_relative_error(std::span<const T> analytic, const std::vector<double>& numeric, std::size_t* where = nullptr) {
  double worst = 0.0;
  for (std::size_t i = 0; i < numeric.size(); ++i) {
    const double e = relative_error(static_cast<double>(analytic[i]), numeric[i]);
    if (e > worst) {
      worst = e;
      if (where) *where = i;
    }
  }
  return worst;
}

/// Distinct values spread over [-1, 1] in shuffled order, at least 2/n apart,
/// so a finite-difference step never reorders them (keeps max-pool argmax fixed).
template <class T>
Tensor<T> separated_random(const Shape& shape, Rng& rng) {
  Tensor<T> t(shape);
  const std::size_t n = t.size();
  const auto order = shuffled_indices(n, rng);
  const double spacing = 2.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i)
    t[i] = static_cast<T>(-1.0 + spacing * (static_cast<double>(order[i]) + 0.5 + 0.2 * rng.uniform(-1.0, 1.0)));
  return t;
}

/// Checks backward() of a freshly built layer against central differences of
/// L = sum(G * forward(x)) for a random projection G, over the input and every
/// parameter. Runs in double precision.
inline GradCheckResult grad_check(const LayerSpec& spec, const Shape& input_shape, double eps, double tol,
                                  std::uint64_t seed, Mode mode = Mode::train) {
  if (!(eps >= 1e-6 && eps <= 1e-3)) throw ConfigError("grad_check: eps must be in [1e-6, 1e-3]");
  Rng rng(seed);
  AnyLayer<double> layer = make_layer<double>(spec, rng);
  Tensor<double> x = separated_random<double>(input_shape, rng);
  const Shape out_shape = layer_output_shape(layer, input_shape);
  Tensor<double> proj(out_shape);
  for (auto& v : proj.vec()) v = rng.uniform(-1.0, 1.0);
  const std::uint64_t dropout_seed = derive_seed(seed, {0xD50ULL});

  auto loss = [&]() {
    const auto f = layer_forward(layer, x, mode, dropout_seed);
    double s = 0.0;
    for (std::size_t i = 0; i < f.output.size(); ++i) s += proj[i] * f.output[i];
    return s;
  };

  auto params = layer_parameters(layer);
  for (auto* p : params) p->zero_grad();
  const auto f = layer_forward(layer, x, mode, dropout_seed);
  const Tensor<double> dx = layer_backward(layer, f.cache, proj);

  GradCheckResult res;
  std::size_t where = 0;
  const auto ndx = numeric_gradient<double>(loss, x.span(), eps);
  res.max_rel_error = max_relative_error<double>(dx.span(), ndx, &where);
  res.worst = "input[" + std::to_string(where) + "]";
  for (auto* p : params) {
    const auto np = numeric_gradient<double>(loss, p->value.span(), eps);
    const double e = max_relative_error<double>(p->grad.span(), np, &where);
    if (e > res.max_rel_error) {
      res.max_rel_error = e;
      res.worst = p->name + "[" + std::to_string(where) + "]";
    }
  }
  res.pass = res.max_rel_error < tol;
  return res;
}

}  // namespace amsl::nn
