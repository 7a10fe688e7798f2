#pragma once

#include <cmath>

#include "amsl/error.hpp"
#include "amsl/nn/parameter.hpp"

namespace amsl::nn {

struct AdamConfig {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps_hat = 1e-8;
};

/// One bias-corrected Adam update over every parameter, then zeroes the
/// gradients. If any gradient is non-finite nothing is updated.
template <class T>
void adam_step(const ParamRefs<T>& params, const AdamConfig& cfg) {
  for (const Parameter<T>* p : params)
    if (!p->grad.all_finite()) throw NumericError("adam_step: non-finite gradient in parameter '" + p->name + "'");

  for (Parameter<T>* p : params) {
    const auto t = static_cast<double>(p->step_count + 1);
    const double c1 = 1.0 - std::pow(cfg.beta1, t);
    const double c2 = 1.0 - std::pow(cfg.beta2, t);
    const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
    for (std::size_t i = 0; i < p->size(); ++i) {
      const T g = p->grad[i];
      p->adam_m[i] = b1 * p->adam_m[i] + (T(1) - b1) * g;
      p->adam_v[i] = b2 * p->adam_v[i] + (T(1) - b2) * g * g;
      const double m_hat = p->adam_m[i] / c1;
      const double v_hat = p->adam_v[i] / c2;
      p->value[i] -= static_cast<T>(cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps_hat));
    }
    ++p->step_count;
    ++p->version;
    p->zero_grad();
  }
}

}  // namespace amsl::nn
