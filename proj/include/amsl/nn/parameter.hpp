#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "amsl/nn/tensor.hpp"
#include "amsl/rng.hpp"

namespace amsl::nn {

/// A trainable tensor with its gradient accumulator and Adam moments.
/// `version` advances on every update so caches can detect staleness.
template <class T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  Tensor<T> adam_m;
  Tensor<T> adam_v;
  std::uint64_t step_count = 0;
  std::uint64_t version = 0;

  Parameter() = default;
  Parameter(std::string n, Tensor<T> v)
      : name(std::move(n)),
        value(std::move(v)),
        grad(value.shape()),
        adam_m(value.shape()),
        adam_v(value.shape()) {}

  void zero_grad() { grad.fill(T(0)); }
  std::size_t size() const noexcept { return value.size(); }
};

/// Glorot-uniform fill, limit sqrt(6 / (fan_in + fan_out)).
template <class T>
Tensor<T> glorot_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  Tensor<T> t(std::move(shape));
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (auto& v : t.vec()) v = static_cast<T>(rng.uniform(-limit, limit));
  return t;
}

template <class T>
using ParamRefs = std::vector<Parameter<T>*>;

}  // namespace amsl::nn
