#pragma once

// Adaptive fusion of global and local memory reads. The gate is
// input-independent: a free scalar r passes through FC(2R) -> BN -> sigmoid
// to give alpha = [alpha_g(0..R-1), alpha_l(0..R-1)].

#include <span>
#include <string>
#include <vector>

#include "amsl/error.hpp"
#include "amsl/nn/layers.hpp"

namespace amsl::fusion {

using nn::Mode;
using nn::Tensor;

template <class T>
class FusionGate {
 public:
  struct Pass {
    std::vector<T> alpha;  // 2R values in (0, 1)
    nn::Cache<T> dense_cache, bn_cache, sigmoid_cache;
  };

  FusionGate(std::size_t variants, Rng& rng, double bn_momentum = 0.99)
      : variants_(variants),
        r(std::string("gate.r"), Tensor<T>({1}, T(1))),
        dense(nn::LayerSpec::dense("gate.dense", 1, 2 * variants), rng),
        bn(nn::LayerSpec::batchnorm("gate.bn", 1, bn_momentum)),
        sigmoid(nn::LayerSpec::simple(nn::LayerKind::sigmoid, "gate.sigmoid")) {
    if (variants == 0) throw ConfigError("FusionGate: variant count must be >= 1");
  }

  std::size_t variants() const noexcept { return variants_; }

  /// alpha = sigmoid(batchnorm(dense(r))). The 2R dense outputs form one
  /// feature observed 2R times, so train mode normalizes across them.
  Pass forward(Mode mode) const {
    Pass p;
    auto d = dense.forward(Tensor<T>({1, 1}, {r.value[0]}), mode);
    p.dense_cache = std::move(d.cache);
    auto b = bn.forward(d.output.reshaped({2 * variants_, 1}), mode);
    p.bn_cache = std::move(b.cache);
    auto s = sigmoid.forward(b.output, mode);
    p.sigmoid_cache = std::move(s.cache);
    p.alpha = s.output.vec();
    return p;
  }

  std::vector<T> fusion_weights(Mode mode) const { return forward(mode).alpha; }

  /// Accumulates gradients of r and the gate layers given dL/dalpha.
  void backward(const Pass& p, std::span<const T> grad_alpha) {
    if (grad_alpha.size() != 2 * variants_) throw DimensionError("FusionGate::backward: expected 2R alpha gradients");
    Tensor<T> g({2 * variants_, 1}, std::vector<T>(grad_alpha.begin(), grad_alpha.end()));
    g = sigmoid.backward(p.sigmoid_cache, g);
    g = bn.backward(p.bn_cache, g);
    g = dense.backward(p.dense_cache, g.reshaped({1, 2 * variants_}));
    r.grad[0] += g[0];
  }

  void update_running_stats(const Pass& p) { bn.update_running_stats(p.bn_cache); }

  nn::ParamRefs<T> parameters() {
    nn::ParamRefs<T> out{&r};
    for (auto* q : dense.parameters()) out.push_back(q);
    for (auto* q : bn.parameters()) out.push_back(q);
    return out;
  }
  nn::ParamRefs<T> buffers() { return bn.buffers(); }

 private:
  std::size_t variants_;

 public:
  nn::Parameter<T> r;
  nn::Dense<T> dense;
  nn::BatchNorm<T> bn;
  nn::Sigmoid<T> sigmoid;
};

/// z~ = alpha_g * z_g + alpha_l * z_l, element-wise.
template <class T>
std::vector<T> fuse(std::span<const T> z_g, std::span<const T> z_l, T alpha_g, T alpha_l) {
  if (z_g.size() != z_l.size()) throw DimensionError("fuse: global and local reads differ in length");
  std::vector<T> out(z_g.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = alpha_g * z_g[i] + alpha_l * z_l[i];
  return out;
}

/// Non-adaptive 1:1 fusion, z~ = z_g + z_l.
template <class T>
std::vector<T> fixed_fuse(std::span<const T> z_g, std::span<const T> z_l) {
  return fuse<T>(z_g, z_l, T(1), T(1));
}

}  // namespace amsl::fusion
