#pragma once

// Shared fixtures for the unit tests and the acceptance binary.

#include <string>

#include "amsl/fusion/fusion.hpp"
#include "amsl/io/synth.hpp"
#include "amsl/memory/memory.hpp"
#include "amsl/model/model.hpp"
#include "amsl/nn/grad_check.hpp"
#include "amsl/pipeline.hpp"

namespace amsl::testing {

/// V=16, N=2, C=4, F=8 with narrow layers; R=3 keeps finite differences cheap.
inline RunConfig tiny_config(Ablation a = Ablation::full) {
  RunConfig c;
  c.window = 16;
  c.stride = 8;
  c.channels = 2;
  c.memory_size = 4;
  c.feature_size = 8;
  c.encoder_channels = 4;
  c.decoder_channels = {6, 5, 4, 1};
  c.classifier_hidden = 8;
  c.transforms = 3;
  c.lambda2 = 0.05;
  c.ablation = a;
  return c;
}

/// Reference desk-scale configuration.
inline RunConfig desk_config(Ablation a = Ablation::full) {
  RunConfig c;
  c.window = 64;
  c.stride = 32;
  c.memory_size = 64;
  c.feature_size = 32;
  c.epochs = 30;
  c.seed = 0;
  c.ablation = a;
  return c;
}

inline Corpus synthetic_corpus(const io::SynthConfig& sc = {}) {
  const auto s = io::synth_generate(sc);
  return Corpus{s.normals, s.anomalies};
}

struct GradReport {
  double worst = 0.0;
  std::string where;
};

/// Central differences of the total training loss against backward() for
/// `samples` random elements of every parameter, in double precision.
inline GradReport end_to_end_grad_check(const RunConfig& cfg, std::uint64_t seed, std::size_t samples = 8,
                                        double eps = 1e-6) {
  AmslModel<double> m(cfg);
  Rng rng(seed);
  const std::size_t batch = 2;
  const auto x = nn::separated_random<double>({m.variants() * batch, cfg.window, cfg.channels, 1}, rng);
  const std::uint64_t fwd_seed = derive_seed(seed, {0xF00DULL});
  auto loss = [&] { return m.forward(x, batch, Mode::train, fwd_seed).loss.total; };
  m.zero_grad();
  m.backward(m.forward(x, batch, Mode::train, fwd_seed));
  GradReport r;
  for (auto* p : m.parameters()) {
    for (std::size_t t = 0; t < samples && t < p->size(); ++t) {
      const std::size_t i = rng.below(p->size());
      const double saved = p->value[i];
      p->value[i] = saved + eps;
      const double up = loss();
      p->value[i] = saved - eps;
      const double down = loss();
      p->value[i] = saved;
      const double e = nn::relative_error(p->grad[i], (up - down) / (2 * eps));
      if (e > r.worst) {
        r.worst = e;
        r.where = p->name + "[" + std::to_string(i) + "]";
      }
    }
  }
  return r;
}

/// Max relative error of address_backward against central differences of
/// <G, read> + scale * sum(entropy).
inline double address_grad_error(std::size_t c, std::size_t f, std::size_t p, double scale, std::uint64_t seed) {
  using nn::Tensor;
  Rng rng(seed);
  auto mem = memory::MemoryMatrix<double>::init(c, f, memory::MemoryRole::local, 0, rng);
  auto random = [&](nn::Shape s) {
    Tensor<double> t(std::move(s));
    for (auto& v : t.vec()) v = rng.uniform(-1, 1);
    return t;
  };
  Tensor<double> z = random({p, f});
  const Tensor<double> g = random({p, f});
  auto loss = [&]() {
    const auto a = memory::address(z, mem);
    double s = scale * a.sparsity();
    for (std::size_t i = 0; i < g.size(); ++i) s += g[i] * a.read[i];
    return s;
  };
  const auto fwd = memory::address(z, mem);
  const auto grads = memory::address_backward(fwd, g, scale, mem);
  const auto nz = nn::numeric_gradient<double>(loss, z.span(), 1e-6);
  const auto nm = nn::numeric_gradient<double>(loss, mem.items.value.span(), 1e-6);
  return std::max(nn::max_relative_error<double>(grads.grad_queries.span(), nz),
                  nn::max_relative_error<double>(grads.grad_memory.span(), nm));
}

/// Max relative error of the fusion gate's backward against central
/// differences of a random projection of alpha.
inline double gate_grad_error(std::size_t variants, std::uint64_t seed) {
  Rng rng(seed);
  fusion::FusionGate<double> gate(variants, rng);
  gate.r.value[0] = rng.uniform(0.5, 1.5);
  std::vector<double> proj(2 * variants);
  for (auto& p : proj) p = rng.uniform(-1, 1);
  auto loss = [&]() {
    const auto a = gate.fusion_weights(nn::Mode::train);
    double s = 0;
    for (std::size_t i = 0; i < proj.size(); ++i) s += proj[i] * a[i];
    return s;
  };
  for (auto* p : gate.parameters()) p->zero_grad();
  gate.backward(gate.forward(nn::Mode::train), proj);
  double worst = 0;
  for (auto* p : gate.parameters()) {
    const auto numeric = nn::numeric_gradient<double>(loss, p->value.span(), 1e-5);
    worst = std::max(worst, nn::max_relative_error<double>(p->grad.span(), numeric));
  }
  return worst;
}

}  // namespace amsl::testing
