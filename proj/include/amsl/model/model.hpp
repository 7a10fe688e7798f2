#pragma once

// The full network: shared encoder, pseudo-label classifier, global and local
// memories with fusion, and one decoder per transformation. Batches are laid
// out variant-major: row r * B + b holds variant r of window b, NHWC [R*B, V, N, 1].

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "amsl/error.hpp"
#include "amsl/fusion/fusion.hpp"
#include "amsl/memory/memory.hpp"
#include "amsl/model/config.hpp"
#include "amsl/nn/adam.hpp"
#include "amsl/nn/layers.hpp"
#include "amsl/nn/losses.hpp"
#include "amsl/signal/transforms.hpp"
#include "amsl/signal/window.hpp"

namespace amsl {

using nn::Mode;
using nn::Shape;
using nn::Tensor;

/// Per-window means over a batch.
struct LossBreakdown {
  double recon = 0.0;   ///< sum over variants of squared reconstruction error
  double ce = 0.0;      ///< pseudo-label cross-entropy, mean over variants
  double sparse = 0.0;  ///< summed entropy of every addressing weight vector
  double total = 0.0;   ///< recon + lambda1 * ce + lambda2 * sparse
};

/// Stacks the transformed variants of the selected windows into one
/// variant-major input tensor.
template <class T>
Tensor<T> assemble_batch(const std::vector<Window>& windows, const std::vector<std::size_t>& indices,
                         const RunConfig& cfg) {
  const std::size_t b = indices.size(), v = cfg.window, n = cfg.channels;
  const auto kinds = cfg.variant_kinds();
  const std::size_t r = kinds.size(), per = v * n;
  Tensor<T> x({r * b, v, n, 1});
  for (std::size_t i = 0; i < b; ++i) {
    const Window& w = windows.at(indices[i]);
    validate_window(w, v, n);
    const auto batch = expand(w, cfg.transform_config(window_seed(cfg.seed, w)));
    for (std::size_t k = 0; k < r; ++k) {
      const auto& src = batch.variants[k].values.data();
      T* dst = x.data() + (k * b + i) * per;
      for (std::size_t j = 0; j < per; ++j) dst[j] = static_cast<T>(src[j]);
    }
  }
  return x;
}

template <class T>
class AmslModel {
 public:
  using SeqPass = typename nn::Sequential<T>::Pass;

  /// Everything a backward pass needs, plus the per-window errors.
  struct State {
    std::size_t batch = 0;
    Mode mode = Mode::eval;
    Tensor<T> input;
    SeqPass encoder;
    std::optional<SeqPass> classifier;
    nn::ClassificationLoss<T> ce;
    std::optional<typename fusion::FusionGate<T>::Pass> gate;
    std::vector<T> alpha;  ///< [alpha_g(0..R-1), alpha_l(0..R-1)]
    std::vector<memory::AddressResult<T>> global, local;
    std::vector<SeqPass> decoders;
    Tensor<T> recon;
    std::vector<double> window_error;
    LossBreakdown loss;
  };

  explicit AmslModel(RunConfig cfg) : cfg_(std::move(cfg)), plan_(validate(cfg_)) {
    kinds_ = cfg_.variant_kinds();
    traits_ = cfg_.traits();
    const std::size_t r = kinds_.size(), f = cfg_.feature_size;
    const bool same = cfg_.same_padding();
    Rng rng(derive_seed(cfg_.seed, {0x696E6974ULL}));

    encoder_ = nn::Sequential<T>({nn::LayerSpec::conv2d("encoder.conv1", 1, cfg_.encoder_channels, same),
                                  nn::LayerSpec::maxpool("encoder.pool1", same),
                                  nn::LayerSpec::conv2d("encoder.conv2", cfg_.encoder_channels, f, same),
                                  nn::LayerSpec::maxpool("encoder.pool2", same)},
                                 rng);
    if (traits_.ssl) {
      const std::size_t cells = plan_.code.h * plan_.code.w;
      classifier_ = nn::Sequential<T>({nn::LayerSpec::conv2d("classifier.conv", f, 1, same),
                                       nn::LayerSpec::simple(nn::LayerKind::flatten, "classifier.flatten"),
                                       nn::LayerSpec::dense("classifier.fc1", cells, cfg_.classifier_hidden),
                                       nn::LayerSpec::dropout("classifier.dropout", cfg_.dropout),
                                       nn::LayerSpec::dense("classifier.fc2", cfg_.classifier_hidden, r)},
                                      rng);
    }
    if (traits_.memory) {
      global_.push_back(memory::MemoryMatrix<T>::init(cfg_.memory_size, f, memory::MemoryRole::global, -1, rng));
      for (std::size_t i = 0; i < r; ++i)
        local_.push_back(memory::MemoryMatrix<T>::init(cfg_.memory_size, f, memory::MemoryRole::local,
                                                       static_cast<int>(i), rng));
      if (traits_.adaptive) gate_.emplace(r, rng, cfg_.bn_momentum);
    }
    const std::size_t dec_count = cfg_.share_decoders ? 1 : r;
    const std::size_t dec_in = traits_.memory ? 2 * f : f;
    for (std::size_t d = 0; d < dec_count; ++d) {
      const std::string p = "decoder." + std::to_string(d) + ".";
      std::vector<nn::LayerSpec> specs;
      std::size_t in = dec_in;
      for (std::size_t i = 0; i < plan_.decoder.size(); ++i) {
        const auto& st = plan_.decoder[i];
        specs.push_back(nn::LayerSpec::conv_transpose(p + "deconv" + std::to_string(i + 1), in, st.channels,
                                                      st.stride, st.out.h, st.out.w));
        in = st.channels;
      }
      decoders_.emplace_back(specs, rng);
    }
    revive_rng_.reseed(derive_seed(cfg_.seed, {0x72657669ULL}));
  }

  const RunConfig& config() const noexcept { return cfg_; }
  const ShapePlan& plan() const noexcept { return plan_; }
  std::size_t variants() const noexcept { return kinds_.size(); }
  const std::vector<TransformKind>& kinds() const noexcept { return kinds_; }

  /// Encoder output, [rows, Hc, Wc, F].
  Tensor<T> encode(const Tensor<T>& x) const { return encoder_.forward(x, Mode::eval).output; }

  /// Current fusion weights: the gate in eval mode, all ones for 1:1 fusion,
  /// empty without memory.
  std::vector<T> fusion_weights() const {
    if (!traits_.memory) return {};
    if (gate_) return gate_->fusion_weights(Mode::eval);
    return std::vector<T>(2 * variants(), T(1));
  }

  /// Forward pass over a variant-major batch of `batch` windows. The
  /// classifier runs only when `with_classifier` (and SSL is enabled).
  State forward(const Tensor<T>& x, std::size_t batch, Mode mode, std::uint64_t seed = 0,
                bool with_classifier = true) const {
    const std::size_t r = variants(), f = cfg_.feature_size;
    nn::expect_shape(x, Shape{r * batch, cfg_.window, cfg_.channels, 1}, "AmslModel::forward input");
    if (batch == 0) throw ContractError("AmslModel::forward: empty batch");
    State s;
    s.batch = batch;
    s.mode = mode;
    s.input = x;
    s.encoder = encoder_.forward(x, mode, derive_seed(seed, {1}));
    const Tensor<T>& codes = s.encoder.output;

    if (traits_.ssl && with_classifier) {
      s.classifier = classifier_.forward(codes, mode, derive_seed(seed, {2}));
      std::vector<int> labels(r * batch);
      for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<int>(i / batch);
      s.ce = nn::softmax_cross_entropy(s.classifier->output, labels);
      s.loss.ce = s.ce.loss;
    }

    if (traits_.memory) {
      if (gate_) {
        s.gate = gate_->forward(mode);
        s.alpha = s.gate->alpha;
      } else {
        s.alpha.assign(2 * r, T(1));
      }
    }

    const Shape code_shape{batch, plan_.code.h, plan_.code.w, f};
    const std::size_t queries = batch * plan_.code.h * plan_.code.w;
    std::vector<Tensor<T>> dec_in(r);
    double sparse = 0.0;
    for (std::size_t k = 0; k < r; ++k) {
      Tensor<T> code = codes.slice0(k * batch, batch);
      if (!traits_.memory) {
        dec_in[k] = std::move(code);
        continue;
      }
      const Tensor<T> q = code.reshaped({queries, f});
      const std::string ctx = " (variant " + std::to_string(k) + ")";
      s.global.push_back(memory::address(q, global_[0], ctx));
      s.local.push_back(memory::address(q, local_[k], ctx));
      const auto& g = s.global.back();
      const auto& l = s.local.back();
      sparse += g.sparsity() + l.sparsity();
      Tensor<T> fused(code_shape);
      const T ag = s.alpha[k], al = s.alpha[r + k];
      for (std::size_t i = 0; i < fused.size(); ++i) fused[i] = ag * g.read[i] + al * l.read[i];
      dec_in[k] = nn::concat_channels(fused, code);
    }

    if (cfg_.share_decoders) {
      s.decoders.push_back(decoders_[0].forward(nn::stack0(dec_in), mode, derive_seed(seed, {3})));
      s.recon = s.decoders[0].output;
    } else {
      std::vector<Tensor<T>> outs;
      for (std::size_t k = 0; k < r; ++k) {
        s.decoders.push_back(decoders_[k].forward(dec_in[k], mode, derive_seed(seed, {3, k})));
        outs.push_back(s.decoders.back().output);
      }
      s.recon = nn::stack0(outs);
    }

    const std::size_t per = cfg_.window * cfg_.channels;
    s.window_error.assign(batch, 0.0);
    for (std::size_t row = 0; row < r * batch; ++row) {
      double e = 0.0;
      const T* a = s.recon.data() + row * per;
      const T* b = x.data() + row * per;
      for (std::size_t j = 0; j < per; ++j) {
        const double d = static_cast<double>(a[j]) - static_cast<double>(b[j]);
        e += d * d;
      }
      s.window_error[row % batch] += e;
    }
    double recon = 0.0;
    for (double e : s.window_error) recon += e;
    const double inv_b = 1.0 / static_cast<double>(batch);
    s.loss.recon = recon * inv_b;
    s.loss.sparse = sparse * inv_b;
    s.loss.total = s.loss.recon + cfg_.lambda1 * s.loss.ce + cfg_.lambda2 * s.loss.sparse;
    if (!std::isfinite(s.loss.total)) throw NumericError("AmslModel::forward: non-finite loss");
    return s;
  }

  /// Accumulates d(total)/d(parameter) into every parameter's grad.
  void backward(const State& s) {
    const std::size_t r = variants(), b = s.batch, f = cfg_.feature_size;
    const std::size_t queries = b * plan_.code.h * plan_.code.w;
    const T two_over_b = static_cast<T>(2.0 / static_cast<double>(b));

    Tensor<T> drecon(s.recon.shape());
    for (std::size_t i = 0; i < drecon.size(); ++i) drecon[i] = two_over_b * (s.recon[i] - s.input[i]);

    std::vector<Tensor<T>> ddec(r);
    if (cfg_.share_decoders) {
      const Tensor<T> d = decoders_[0].backward(s.decoders[0], drecon);
      for (std::size_t k = 0; k < r; ++k) ddec[k] = d.slice0(k * b, b);
    } else {
      for (std::size_t k = 0; k < r; ++k) ddec[k] = decoders_[k].backward(s.decoders[k], drecon.slice0(k * b, b));
    }

    std::vector<Tensor<T>> dcodes(r);
    std::vector<T> dalpha(traits_.memory ? 2 * r : 0, T(0));
    const double sparse_scale = cfg_.lambda2 / static_cast<double>(b);
    for (std::size_t k = 0; k < r; ++k) {
      if (!traits_.memory) {
        dcodes[k] = std::move(ddec[k]);
        continue;
      }
      auto [dfused, dcode] = nn::split_channels(ddec[k], f);
      const auto& g = s.global[k];
      const auto& l = s.local[k];
      const T ag = s.alpha[k], al = s.alpha[r + k];
      Tensor<T> grg({queries, f}), grl({queries, f});
      double dag = 0.0, dal = 0.0;
      for (std::size_t i = 0; i < dfused.size(); ++i) {
        grg[i] = ag * dfused[i];
        grl[i] = al * dfused[i];
        dag += static_cast<double>(dfused[i]) * g.read[i];
        dal += static_cast<double>(dfused[i]) * l.read[i];
      }
      dalpha[k] = static_cast<T>(dag);
      dalpha[r + k] = static_cast<T>(dal);
      auto gg = memory::address_backward(g, grg, sparse_scale, global_[0]);
      auto gl = memory::address_backward(l, grl, sparse_scale, local_[k]);
      nn::add_inplace(global_[0].items.grad, gg.grad_memory);
      nn::add_inplace(local_[k].items.grad, gl.grad_memory);
      nn::add_inplace(dcode, gg.grad_queries);
      nn::add_inplace(dcode, gl.grad_queries);
      dcodes[k] = std::move(dcode);
    }
    if (gate_ && s.gate) gate_->backward(*s.gate, dalpha);

    Tensor<T> dz = nn::stack0(dcodes);
    if (s.classifier) {
      Tensor<T> dlogits = s.ce.grad;
      const T l1 = static_cast<T>(cfg_.lambda1);
      for (auto& v : dlogits.vec()) v *= l1;
      nn::add_inplace(dz, classifier_.backward(*s.classifier, dlogits));
    }
    encoder_.backward(s.encoder, dz);
  }

  /// Forward + backward in train mode; advances the gate's running statistics.
  LossBreakdown accumulate(const Tensor<T>& x, std::size_t batch, std::uint64_t seed) {
    State s = forward(x, batch, Mode::train, seed);
    backward(s);
    if (gate_ && s.gate) gate_->update_running_stats(*s.gate);
    return s.loss;
  }

  /// One Adam update from the accumulated gradients, then dead memory rows
  /// are re-drawn. Returns the number of revived rows.
  std::size_t step(const nn::AdamConfig& adam) {
    nn::adam_step(parameters(), adam);
    std::size_t revived = 0;
    for (auto& m : global_) revived += m.revive_dead_rows(revive_rng_);
    for (auto& m : local_) revived += m.revive_dead_rows(revive_rng_);
    return revived;
  }

  nn::ParamRefs<T> parameters() {
    nn::ParamRefs<T> out = encoder_.parameters();
    for (auto* p : classifier_.parameters()) out.push_back(p);
    for (auto& m : global_) out.push_back(&m.items);
    for (auto& m : local_) out.push_back(&m.items);
    if (gate_)
      for (auto* p : gate_->parameters()) out.push_back(p);
    for (auto& d : decoders_)
      for (auto* p : d.parameters()) out.push_back(p);
    return out;
  }

  /// Non-trainable state that must persist (batch-norm running statistics).
  nn::ParamRefs<T> buffers() { return gate_ ? gate_->buffers() : nn::ParamRefs<T>{}; }

  /// Parameters followed by buffers; names are unique.
  nn::ParamRefs<T> state_tensors() {
    auto out = parameters();
    for (auto* p : buffers()) out.push_back(p);
    return out;
  }

  void zero_grad() {
    for (auto* p : parameters()) p->zero_grad();
  }

  std::size_t parameter_count() {
    std::size_t n = 0;
    for (auto* p : parameters()) n += p->size();
    return n;
  }

  nn::Sequential<T>& encoder() noexcept { return encoder_; }
  nn::Sequential<T>& classifier() noexcept { return classifier_; }
  std::vector<memory::MemoryMatrix<T>>& global_memory() noexcept { return global_; }
  std::vector<memory::MemoryMatrix<T>>& local_memories() noexcept { return local_; }
  std::optional<fusion::FusionGate<T>>& gate() noexcept { return gate_; }
  std::vector<nn::Sequential<T>>& decoders() noexcept { return decoders_; }

 private:
  RunConfig cfg_;
  ShapePlan plan_;
  std::vector<TransformKind> kinds_;
  AblationTraits traits_{};
  nn::Sequential<T> encoder_, classifier_;
  std::vector<memory::MemoryMatrix<T>> global_, local_;  // global_ holds 0 or 1 entry
  std::optional<fusion::FusionGate<T>> gate_;
  std::vector<nn::Sequential<T>> decoders_;
  Rng revive_rng_;
};

}  // namespace amsl
