#pragma once

// Fixed layer set with hand-written forward and backward passes.
//
// forward() is const and returns the output together with a Cache holding
// whatever backward() needs. backward() accumulates parameter gradients into
// the layer's Parameters and returns the gradient w.r.t. the input. A cache
// is bound to the layer instance and the parameter version it was computed
// with; handing backward() a cache from another layer, an empty cache, or a
// cache predating an optimizer step is a ContractError.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <variant>
#include <vector>

#include "amsl/error.hpp"
#include "amsl/nn/gemm.hpp"
#include "amsl/nn/parameter.hpp"
#include "amsl/nn/tensor.hpp"
#include "amsl/rng.hpp"

namespace amsl::nn {

enum class Mode { train, eval };

enum class LayerKind { conv2d, maxpool2x2, conv_transpose2d, dense, batchnorm, sigmoid, softmax, dropout, flatten };

inline const char* layer_kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::maxpool2x2: return "maxpool2x2";
    case LayerKind::conv_transpose2d: return "conv_transpose2d";
    case LayerKind::dense: return "dense";
    case LayerKind::batchnorm: return "batchnorm";
    case LayerKind::sigmoid: return "sigmoid";
    case LayerKind::softmax: return "softmax";
    case LayerKind::dropout: return "dropout";
    case LayerKind::flatten: return "flatten";
  }
  return "?";
}

/// Kind plus kind-specific hyperparameters. Unused fields are ignored.
struct LayerSpec {
  LayerKind kind = LayerKind::dense;
  std::string name;
  std::size_t in_channels = 0;   // conv: input channels; dense: input units; batchnorm: features
  std::size_t out_channels = 0;  // conv: kernels; dense: output units
  std::size_t kernel_h = 4, kernel_w = 4;
  std::size_t stride_h = 1, stride_w = 1;
  std::size_t pad_top = 0, pad_bottom = 0, pad_left = 0, pad_right = 0;  // conv2d
  std::size_t out_h = 0, out_w = 0;  // conv_transpose2d: cropped extents, 0 = uncropped
  bool ceil_mode = false;            // maxpool2x2: keep partial border windows
  double rate = 0.5;                 // dropout
  double momentum = 0.99;            // batchnorm running-average momentum
  double epsilon = 1e-3;             // batchnorm

  static LayerSpec conv2d(std::string name, std::size_t in, std::size_t out, bool same_padding,
                          std::size_t k = 4) {
    LayerSpec s{.kind = LayerKind::conv2d, .name = std::move(name), .in_channels = in, .out_channels = out,
                .kernel_h = k, .kernel_w = k};
    if (same_padding) {
      // Extra row/column goes on the trailing side for even kernels.
      s.pad_top = s.pad_left = (k - 1) / 2;
      s.pad_bottom = s.pad_right = k - 1 - (k - 1) / 2;
    }
    return s;
  }
  static LayerSpec maxpool(std::string name, bool ceil_mode) {
    return {.kind = LayerKind::maxpool2x2, .name = std::move(name), .ceil_mode = ceil_mode};
  }
  static LayerSpec conv_transpose(std::string name, std::size_t in, std::size_t out, std::size_t stride,
                                  std::size_t out_h, std::size_t out_w, std::size_t k = 4) {
    return {.kind = LayerKind::conv_transpose2d, .name = std::move(name), .in_channels = in, .out_channels = out,
            .kernel_h = k, .kernel_w = k, .stride_h = stride, .stride_w = stride, .out_h = out_h, .out_w = out_w};
  }
  static LayerSpec dense(std::string name, std::size_t in, std::size_t out) {
    return {.kind = LayerKind::dense, .name = std::move(name), .in_channels = in, .out_channels = out};
  }
  static LayerSpec batchnorm(std::string name, std::size_t features, double momentum = 0.99, double eps = 1e-3) {
    return {.kind = LayerKind::batchnorm, .name = std::move(name), .in_channels = features, .momentum = momentum,
            .epsilon = eps};
  }
  static LayerSpec simple(LayerKind kind, std::string name) { return {.kind = kind, .name = std::move(name)}; }
  static LayerSpec dropout(std::string name, double rate) {
    return {.kind = LayerKind::dropout, .name = std::move(name), .rate = rate};
  }
};

template <class T>
struct Cache {
  std::uint64_t owner = 0;
  std::uint64_t version = 0;
  bool valid = false;
  Shape in_shape;
  Tensor<T> input;
  Tensor<T> aux;  // layer-specific: activation output, normalized input, dropout mask
  std::vector<T> stats;
  std::vector<std::uint32_t> argmax;
  Mode mode = Mode::eval;
};

template <class T>
struct Forward {
  Tensor<T> output;
  Cache<T> cache;
};

namespace detail {

inline std::uint64_t next_layer_id() {
  static std::atomic<std::uint64_t> counter{1};
  return counter++;
}

template <class T>
void check_cache(const Cache<T>& c, std::uint64_t owner, std::uint64_t version, const std::string& who) {
  if (!c.valid) throw ContractError(who + ": backward called without a forward cache");
  if (c.owner != owner) throw ContractError(who + ": cache belongs to a different layer");
  if (c.version != version) throw ContractError(who + ": stale cache, parameters changed since forward");
}

}  // namespace detail

/// Common identity and bookkeeping for every layer.
template <class T>
class LayerBase {
 public:
  explicit LayerBase(LayerSpec spec) : spec_(std::move(spec)), id_(detail::next_layer_id()) {}
  const LayerSpec& spec() const noexcept { return spec_; }
  const std::string& name() const noexcept { return spec_.name; }
  std::uint64_t id() const noexcept { return id_; }

 protected:
  Cache<T> make_cache(const Tensor<T>& input, std::uint64_t version, Mode mode) const {
    Cache<T> c;
    c.owner = id_;
    c.version = version;
    c.valid = true;
    c.in_shape = input.shape();
    c.input = input;
    c.mode = mode;
    return c;
  }
  std::string who() const { return std::string(layer_kind_name(spec_.kind)) + " '" + spec_.name + "'"; }

  LayerSpec spec_;
  std::uint64_t id_;
};

// ---------------------------------------------------------------- conv2d

template <class T>
class Conv2d : public LayerBase<T> {
  using LayerBase<T>::spec_;

 public:
  Conv2d(LayerSpec spec, Rng& rng) : LayerBase<T>(std::move(spec)) {
    const auto& s = spec_;
    if (s.in_channels == 0 || s.out_channels == 0 || s.kernel_h == 0 || s.kernel_w == 0 || s.stride_h == 0 ||
        s.stride_w == 0)
      throw ConfigError(this->who() + ": channels, kernel and stride must be positive");
    const std::size_t fan_in = s.kernel_h * s.kernel_w * s.in_channels;
    const std::size_t fan_out = s.kernel_h * s.kernel_w * s.out_channels;
    weight = Parameter<T>(s.name + ".weight",
                          glorot_uniform<T>({s.kernel_h, s.kernel_w, s.in_channels, s.out_channels}, fan_in, fan_out,
                                            rng));
    bias = Parameter<T>(s.name + ".bias", Tensor<T>({s.out_channels}));
  }

  Shape output_shape(const Shape& in) const {
    const auto& s = spec_;
    if (in.size() != 4 || in[3] != s.in_channels)
      throw DimensionError(this->who() + ": expected [N,H,W," + std::to_string(s.in_channels) + "] input, got " +
                           shape_str(in));
    const std::size_t ph = in[1] + s.pad_top + s.pad_bottom, pw = in[2] + s.pad_left + s.pad_right;
    if (ph < s.kernel_h || pw < s.kernel_w)
      throw DimensionError(this->who() + ": input " + shape_str(in) + " smaller than kernel " +
                           std::to_string(s.kernel_h) + "x" + std::to_string(s.kernel_w));
    return {in[0], (ph - s.kernel_h) / s.stride_h + 1, (pw - s.kernel_w) / s.stride_w + 1, s.out_channels};
  }

  Forward<T> forward(const Tensor<T>& x, Mode mode = Mode::eval) const {
    const Shape os = output_shape(x.shape());
    const std::size_t rows = os[0] * os[1] * os[2];
    const std::size_t k = patch_size();
    std::vector<T> cols(rows * k);
    im2col(x, os, cols.data());
    Tensor<T> y(os);
    gemm::ab(cols.data(), weight.value.data(), y.data(), rows, k, spec_.out_channels);
    add_bias(y, bias.value);
    return {std::move(y), this->make_cache(x, weight.version, mode)};
  }

  Tensor<T> backward(const Cache<T>& cache, const Tensor<T>& dy) {
    detail::check_cache(cache, this->id(), weight.version, this->who());
    const Tensor<T>& x = cache.input;
    const Shape os = output_shape(x.shape());
    expect_shape(dy, os, this->who() + " backward");
    const std::size_t rows = os[0] * os[1] * os[2];
    const std::size_t k = patch_size();
    const std::size_t co = spec_.out_channels;
    std::vector<T> cols(rows * k);
    im2col(x, os, cols.data());
    gemm::atb_acc(cols.data(), dy.data(), weight.grad.data(), rows, k, co);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < co; ++c) bias.grad[c] += dy[r * co + c];
    gemm::abt(dy.data(), weight.value.data(), cols.data(), rows, co, k);
    Tensor<T> dx(x.shape());
    col2im(cols.data(), os, dx);
    return dx;
  }

  ParamRefs<T> parameters() { return {&weight, &bias}; }

  Parameter<T> weight, bias;

 private:
  std::size_t patch_size() const { return spec_.kernel_h * spec_.kernel_w * spec_.in_channels; }

  template <class F>
  void for_each_tap(const Shape& in, const Shape& os, F&& f) const {
    const auto& s = spec_;
    const std::size_t H = in[1], W = in[2];
    std::size_t row = 0;
    for (std::size_t n = 0; n < os[0]; ++n)
      for (std::size_t oh = 0; oh < os[1]; ++oh)
        for (std::size_t ow = 0; ow < os[2]; ++ow, ++row) {
          std::size_t tap = 0;
          for (std::size_t kh = 0; kh < s.kernel_h; ++kh) {
            const auto ih = static_cast<std::ptrdiff_t>(oh * s.stride_h + kh) - static_cast<std::ptrdiff_t>(s.pad_top);
            for (std::size_t kw = 0; kw < s.kernel_w; ++kw, ++tap) {
              const auto iw =
                  static_cast<std::ptrdiff_t>(ow * s.stride_w + kw) - static_cast<std::ptrdiff_t>(s.pad_left);
              const bool inside = ih >= 0 && iw >= 0 && ih < static_cast<std::ptrdiff_t>(H) &&
                                  iw < static_cast<std::ptrdiff_t>(W);
              f(row, tap, inside ? ((n * H + static_cast<std::size_t>(ih)) * W + static_cast<std::size_t>(iw)) : 0,
                inside);
            }
          }
        }
  }

  void im2col(const Tensor<T>& x, const Shape& os, T* cols) const {
    const std::size_t ci = spec_.in_channels, k = patch_size();
    const T* xd = x.data();
    for_each_tap(x.shape(), os, [&](std::size_t row, std::size_t tap, std::size_t pix, bool inside) {
      T* dst = cols + row * k + tap * ci;
      if (inside)
        std::copy_n(xd + pix * ci, ci, dst);
      else
        std::fill_n(dst, ci, T(0));
    });
  }

  void col2im(const T* cols, const Shape& os, Tensor<T>& dx) const {
    const std::size_t ci = spec_.in_channels, k = patch_size();
    T* xd = dx.data();
    for_each_tap(dx.shape(), os, [&](std::size_t row, std::size_t tap, std::size_t pix, bool inside) {
      if (!inside) return;
      const T* src = cols + row * k + tap * ci;
      T* dst = xd + pix * ci;
      for (std::size_t c = 0; c < ci; ++c) dst[c] += src[c];
    });
  }

  static void add_bias(Tensor<T>& y, const Tensor<T>& b) {
    const std::size_t co = b.size();
    for (std::size_t i = 0; i < y.size(); i += co)
      for (std::size_t c = 0; c < co; ++c) y[i + c] += b[c];
  }
};

// ------------------------------------------------------------ maxpool2x2

template <class T>
class MaxPool2x2 : public LayerBase<T> {
  using LayerBase<T>::spec_;

 public:
  explicit MaxPool2x2(LayerSpec spec) : LayerBase<T>(std::move(spec)) {}

  Shape output_shape(const Shape& in) const {
    if (in.size() != 4) throw DimensionError(this->who() + ": expected [N,H,W,C] input, got " + shape_str(in));
    const std::size_t h = spec_.ceil_mode ? (in[1] + 1) / 2 : in[1] / 2;
    const std::size_t w = spec_.ceil_mode ? (in[2] + 1) / 2 : in[2] / 2;
    if (h == 0 || w == 0) throw DimensionError(this->who() + ": input " + shape_str(in) + " too small to pool");
    return {in[0], h, w, in[3]};
  }

  Forward<T> forward(const Tensor<T>& x, Mode mode = Mode::eval) const {
    const Shape os = output_shape(x.shape());
    const std::size_t H = x.dim(1), W = x.dim(2), C = x.dim(3);
    Tensor<T> y(os);
    Cache<T> cache = this->make_cache(Tensor<T>(), 0, mode);
    cache.in_shape = x.shape();
    cache.argmax.resize(y.size());
    std::size_t o = 0;
    for (std::size_t n = 0; n < os[0]; ++n)
      for (std::size_t oh = 0; oh < os[1]; ++oh)
        for (std::size_t ow = 0; ow < os[2]; ++ow)
          for (std::size_t c = 0; c < C; ++c, ++o) {
            T best = -std::numeric_limits<T>::infinity();
            std::size_t arg = 0;
            for (std::size_t dh = 0; dh < 2; ++dh) {
              const std::size_t ih = 2 * oh + dh;
              if (ih >= H) break;
              for (std::size_t dw = 0; dw < 2; ++dw) {
                const std::size_t iw = 2 * ow + dw;
                if (iw >= W) break;
                const std::size_t idx = ((n * H + ih) * W + iw) * C + c;
                if (x[idx] > best) {
                  best = x[idx];
                  arg = idx;
                }
              }
            }
            y[o] = best;
            cache.argmax[o] = static_cast<std::uint32_t>(arg);
          }
    return {std::move(y), std::move(cache)};
  }

  Tensor<T> backward(const Cache<T>& cache, const Tensor<T>& dy) {
    detail::check_cache(cache, this->id(), 0, this->who());
    if (dy.size() != cache.argmax.size()) throw DimensionError(this->who() + " backward: upstream size mismatch");
    Tensor<T> dx(cache.in_shape);
    for (std::size_t i = 0; i < dy.size(); ++i) dx[cache.argmax[i]] += dy[i];
    return dx;
  }

  ParamRefs<T> parameters() { return {}; }
};

// ------------------------------------------------------ conv_transpose2d

template <class T>
class ConvTranspose2d : public LayerBase<T> {
  using LayerBase<T>::spec_;

 public:
  ConvTranspose2d(LayerSpec spec, Rng& rng) : LayerBase<T>(std::move(spec)) {
    const auto& s = spec_;
    if (s.in_channels == 0 || s.out_channels == 0 || s.kernel_h == 0 || s.kernel_w == 0 || s.stride_h == 0 ||
        s.stride_w == 0)
      throw ConfigError(this->who() + ": channels, kernel and stride must be positive");
    const std::size_t fan_in = s.kernel_h * s.kernel_w * s.out_channels;
    const std::size_t fan_out = s.kernel_h * s.kernel_w * s.in_channels;
    weight = Parameter<T>(s.name + ".weight",
                          glorot_uniform<T>({s.in_channels, s.kernel_h, s.kernel_w, s.out_channels}, fan_in, fan_out,
                                            rng));
    bias = Parameter<T>(s.name + ".bias", Tensor<T>({s.out_channels}));
  }

  /// Uncropped extent (in - 1) * stride + kernel along each axis.
  std::pair<std::size_t, std::size_t> full_extent(const Shape& in) const {
    return {(in[1] - 1) * spec_.stride_h + spec_.kernel_h, (in[2] - 1) * spec_.stride_w + spec_.kernel_w};
  }

  Shape output_shape(const Shape& in) const {
    const auto& s = spec_;
    if (in.size() != 4 || in[3] != s.in_channels || in[1] == 0 || in[2] == 0)
      throw DimensionError(this->who() + ": expected [N,H,W," + std::to_string(s.in_channels) + "] input, got " +
                           shape_str(in));
    const auto [fh, fw] = full_extent(in);
    const std::size_t oh = s.out_h ? s.out_h : fh, ow = s.out_w ? s.out_w : fw;
    if (oh > fh || ow > fw)
      throw DimensionError(this->who() + ": requested output " + std::to_string(oh) + "x" + std::to_string(ow) +
                           " exceeds reachable " + std::to_string(fh) + "x" + std::to_string(fw) + " from input " +
                           shape_str(in));
    return {in[0], oh, ow, s.out_channels};
  }

  Forward<T> forward(const Tensor<T>& x, Mode mode = Mode::eval) const {
    const Shape os = output_shape(x.shape());
    const std::size_t rows = x.dim(0) * x.dim(1) * x.dim(2);
    const std::size_t k = taps() * spec_.out_channels;
    std::vector<T> cols(rows * k);
    gemm::ab(x.data(), weight.value.data(), cols.data(), rows, spec_.in_channels, k);
    Tensor<T> y(os);
    for (std::size_t i = 0; i < y.size(); i += spec_.out_channels)
      for (std::size_t c = 0; c < spec_.out_channels; ++c) y[i + c] = bias.value[c];
    for_each_tap(x.shape(), os, [&](std::size_t row, std::size_t tap, std::size_t opix) {
      const T* src = cols.data() + row * k + tap * spec_.out_channels;
      T* dst = y.data() + opix * spec_.out_channels;
      for (std::size_t c = 0; c < spec_.out_channels; ++c) dst[c] += src[c];
    });
    return {std::move(y), this->make_cache(x, weight.version, mode)};
  }

  Tensor<T> backward(const Cache<T>& cache, const Tensor<T>& dy) {
    detail::check_cache(cache, this->id(), weight.version, this->who());
    const Tensor<T>& x = cache.input;
    const Shape os = output_shape(x.shape());
    expect_shape(dy, os, this->who() + " backward");
    const std::size_t rows = x.dim(0) * x.dim(1) * x.dim(2);
    const std::size_t co = spec_.out_channels;
    const std::size_t k = taps() * co;
    std::vector<T> dcols(rows * k, T(0));
    for_each_tap(x.shape(), os, [&](std::size_t row, std::size_t tap, std::size_t opix) {
      std::copy_n(dy.data() + opix * co, co, dcols.data() + row * k + tap * co);
    });
    for (std::size_t i = 0; i < dy.size(); i += co)
      for (std::size_t c = 0; c < co; ++c) bias.grad[c] += dy[i + c];
    gemm::atb_acc(x.data(), dcols.data(), weight.grad.data(), rows, spec_.in_channels, k);
    Tensor<T> dx(x.shape());
    gemm::abt(dcols.data(), weight.value.data(), dx.data(), rows, k, spec_.in_channels);
    return dx;
  }

  ParamRefs<T> parameters() { return {&weight, &bias}; }

  Parameter<T> weight, bias;

 private:
  std::size_t taps() const { return spec_.kernel_h * spec_.kernel_w; }

  // Visits every (input pixel, kernel tap) that lands inside the cropped output.
  template <class F>
  void for_each_tap(const Shape& in, const Shape& os, F&& f) const {
    const auto& s = spec_;
    const auto [fh, fw] = full_extent(in);
    const std::size_t off_h = (fh - os[1]) / 2, off_w = (fw - os[2]) / 2;
    std::size_t row = 0;
    for (std::size_t n = 0; n < in[0]; ++n)
      for (std::size_t ih = 0; ih < in[1]; ++ih)
        for (std::size_t iw = 0; iw < in[2]; ++iw, ++row)
          for (std::size_t kh = 0; kh < s.kernel_h; ++kh) {
            const auto oh = static_cast<std::ptrdiff_t>(ih * s.stride_h + kh) - static_cast<std::ptrdiff_t>(off_h);
            if (oh < 0 || oh >= static_cast<std::ptrdiff_t>(os[1])) continue;
            for (std::size_t kw = 0; kw < s.kernel_w; ++kw) {
              const auto ow = static_cast<std::ptrdiff_t>(iw * s.stride_w + kw) - static_cast<std::ptrdiff_t>(off_w);
              if (ow < 0 || ow >= static_cast<std::ptrdiff_t>(os[2])) continue;
              f(row, kh * s.kernel_w + kw,
                (n * os[1] + static_cast<std::size_t>(oh)) * os[2] + static_cast<std::size_t>(ow));
            }
          }
  }
};

// ------------------------------------------------------------------ dense

template <class T>
class Dense : public LayerBase<T> {
  using LayerBase<T>::spec_;

 public:
  Dense(LayerSpec spec, Rng& rng) : LayerBase<T>(std::move(spec)) {
    if (spec_.in_channels == 0 || spec_.out_channels == 0) throw ConfigError(this->who() + ": units must be positive");
    weight = Parameter<T>(spec_.name + ".weight", glorot_uniform<T>({spec_.in_channels, spec_.out_channels},
                                                                    spec_.in_channels, spec_.out_channels, rng));
    bias = Parameter<T>(spec_.name + ".bias", Tensor<T>({spec_.out_channels}));
  }

  Shape output_shape(const Shape& in) const {
    if (in.size() != 2 || in[1] != spec_.in_channels)
      throw DimensionError(this->who() + ": expected [N," + std::to_string(spec_.in_channels) + "] input, got " +
                           shape_str(in));
    return {in[0], spec_.out_channels};
  }

  Forward<T> forward(const Tensor<T>& x, Mode mode = Mode::eval) const {
    const Shape os = output_shape(x.shape());
    Tensor<T> y(os);
    gemm::ab(x.data(), weight.value.data(), y.data(), os[0], spec_.in_channels, spec_.out_channels);
    for (std::size_t r = 0; r < os[0]; ++r)
      for (std::size_t c = 0; c < os[1]; ++c) y[r * os[1] + c] += bias.value[c];
    return {std::move(y), this->make_cache(x, weight.version, mode)};
  }

  Tensor<T> backward(const Cache<T>& cache, const Tensor<T>& dy) {
    detail::check_cache(cache, this->id(), weight.version, this->who());
    const Tensor<T>& x = cache.input;
    expect_shape(dy, output_shape(x.shape()), this->who() + " backward");
    const std::size_t n = x.dim(0), in = spec_.in_channels, out = spec_.out_channels;
    gemm::atb_acc(x.data(), dy.data(), weight.grad.data(), n, in, out);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < out; ++c) bias.grad[c] += dy[r * out + c];
    Tensor<T> dx(x.shape());
    gemm::abt(dy.data(), weight.value.data(), dx.data(), n, out, in);
    return dx;
  }

  ParamRefs<T> parameters() { return {&weight, &bias}; }

  Parameter<T> weight, bias;
};

// -------------------------------------------------------------- batchnorm

/// Normalizes each feature (last axis) over the batch (first axis). Running
/// statistics are only advanced by update_running_stats(), keeping forward pure.
template <class T>
class BatchNorm : public LayerBase<T> {
  using LayerBase<T>::spec_;

 public:
  explicit BatchNorm(LayerSpec spec) : LayerBase<T>(std::move(spec)) {
    const std::size_t f = spec_.in_channels;
    if (f == 0) throw ConfigError(this->who() + ": feature count must be positive");
    gamma = Parameter<T>(spec_.name + ".gamma", Tensor<T>({f}, T(1)));
    beta = Parameter<T>(spec_.name + ".beta", Tensor<T>({f}));
    running_mean = Parameter<T>(spec_.name + ".running_mean", Tensor<T>({f}));
    running_var = Parameter<T>(spec_.name + ".running_var", Tensor<T>({f}, T(1)));
  }

  Shape output_shape(const Shape& in) const {
    if (in.size() != 2 || in[1] != spec_.in_channels || in[0] == 0)
      throw DimensionError(this->who() + ": expected [N," + std::to_string(spec_.in_channels) + "] input, got " +
                           shape_str(in));
    return in;
  }

  Forward<T> forward(const Tensor<T>& x, Mode mode = Mode::eval) const {
    output_shape(x.shape());
    const std::size_t n = x.dim(0), f = spec_.in_channels;
    Cache<T> cache = this->make_cache(x, gamma.version, mode);
    std::vector<T> mean(f), inv_std(f), var(f);
    if (mode == Mode::train) {
      for (std::size_t j = 0; j < f; ++j) {
        double m = 0, v = 0;
        for (std::size_t i = 0; i < n; ++i) m += x[i * f + j];
        m /= static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) v += (x[i * f + j] - m) * (x[i * f + j] - m);
        v /= static_cast<double>(n);
        mean[j] = static_cast<T>(m);
        var[j] = static_cast<T>(v);
        inv_std[j] = static_cast<T>(1.0 / std::sqrt(v + spec_.epsilon));
      }
    } else {
      for (std::size_t j = 0; j < f; ++j) {
        mean[j] = running_mean.value[j];
        var[j] = running_var.value[j];
        inv_std[j] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(running_var.value[j]) + spec_.epsilon));
      }
    }
    Tensor<T> xhat(x.shape()), y(x.shape());
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < f; ++j) {
        const T h = (x[i * f + j] - mean[j]) * inv_std[j];
        xhat[i * f + j] = h;
        y[i * f + j] = gamma.value[j] * h + beta.value[j];
      }
    cache.aux = std::move(xhat);
    cache.stats = inv_std;
    cache.stats.insert(cache.stats.end(), mean.begin(), mean.end());
    cache.stats.insert(cache.stats.end(), var.begin(), var.end());
    return {std::move(y), std::move(cache)};
  }

  Tensor<T> backward(const Cache<T>& cache, const Tensor<T>& dy) {
    detail::check_cache(cache, this->id(), gamma.version, this->who());
    expect_shape(dy, cache.input.shape(), this->who() + " backward");
    const std::size_t n = dy.dim(0), f = spec_.in_channels;
    const Tensor<T>& xhat = cache.aux;
    Tensor<T> dx(dy.shape());
    for (std::size_t j = 0; j < f; ++j) {
      const T inv_std = cache.stats[j];
      double sum_dy = 0, sum_dy_xhat = 0;
      for (std::size_t i = 0; i < n; ++i) {
        sum_dy += dy[i * f + j];
        sum_dy_xhat += dy[i * f + j] * xhat[i * f + j];
      }
      gamma.grad[j] += static_cast<T>(sum_dy_xhat);
      beta.grad[j] += static_cast<T>(sum_dy);
      const T g = gamma.value[j];
      if (cache.mode == Mode::train) {
        const double nn = static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i)
          dx[i * f + j] = static_cast<T>(g * inv_std / nn *
                                         (nn * dy[i * f + j] - sum_dy - xhat[i * f + j] * sum_dy_xhat));
      } else {
        for (std::size_t i = 0; i < n; ++i) dx[i * f + j] = g * inv_std * dy[i * f + j];
      }
    }
    return dx;
  }

  /// running = momentum * running + (1 - momentum) * batch statistic.
  void update_running_stats(const Cache<T>& cache) {
    if (!cache.valid || cache.owner != this->id() || cache.mode != Mode::train) return;
    const std::size_t f = spec_.in_channels;
    const T m = static_cast<T>(spec_.momentum);
    for (std::size_t j = 0; j < f; ++j) {
      running_mean.value[j] = m * running_mean.value[j] + (T(1) - m) * cache.stats[f + j];
      running_var.value[j] = m * running_var.value[j] + (T(1) - m) * cache.stats[2 * f + j];
    }
  }

  ParamRefs<T> parameters() { return {&gamma, &beta}; }
  ParamRefs<T> buffers() { return {&running_mean, &running_var}; }

  Parameter<T> gamma, beta, running_mean, running_var;
};

// ---------------------------------------------------- elementwise / shape

template <class T>
class Sigmoid : public LayerBase<T> {
 public:
  explicit Sigmoid(LayerSpec spec) : LayerBase<T>(std::move(spec)) {}
  Shape output_shape(const Shape& in) const { return in; }

  Forward<T> forward(const Tensor<T>& x, Mode mode = Mode::eval) const {
    Tensor<T> y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = T(1) / (T(1) + std::exp(-x[i]));
    Cache<T> c = this->make_cache(Tensor<T>(), 0, mode);
    c.aux = y;
    return {std::move(y), std::move(c)};
  }

  Tensor<T> backward(const Cache<T>& cache, const Tensor<T>& dy) {
    detail::check_cache(cache, this->id(), 0, this->who());
    expect_shape(dy, cache.aux.shape(), this->who() + " backward");
    Tensor<T> dx(dy.shape());
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] = dy[i] * cache.aux[i] * (T(1) - cache.aux[i]);
    return dx;
  }
  ParamRefs<T> parameters() { return {}; }
};

/// Softmax over the last axis.
template <class T>
class Softmax : public LayerBase<T> {
 public:
  explicit Softmax(LayerSpec spec) : LayerBase<T>(std::move(spec)) {}
  Shape output_shape(const Shape& in) const { return in; }

  static Tensor<T> apply(const Tensor<T>& x) {
    const std::size_t c = x.shape().back();
    Tensor<T> y(x.shape());
    for (std::size_t r = 0; r < x.size(); r += c) {
      T mx = x[r];
      for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, x[r + j]);
      double sum = 0;
      for (std::size_t j = 0; j < c; ++j) {
        y[r + j] = std::exp(x[r + j] - mx);
        sum += y[r + j];
      }
      for (std::size_t j = 0; j < c; ++j) y[r + j] = static_cast<T>(y[r + j] / sum);
    }
    return y;
  }

  Forward<T> forward(const Tensor<T>& x, Mode mode = Mode::eval) const {
    if (x.rank() == 0) throw DimensionError(this->who() + ": empty input");
    Tensor<T> y = apply(x);
    Cache<T> c = this->make_cache(Tensor<T>(), 0, mode);
    c.aux = y;
    return {std::move(y), std::move(c)};
  }

  Tensor<T> backward(const Cache<T>& cache, const Tensor<T>& dy) {
    detail::check_cache(cache, this->id(), 0, this->who());
    const Tensor<T>& y = cache.aux;
    expect_shape(dy, y.shape(), this->who() + " backward");
    const std::size_t c = y.shape().back();
    Tensor<T> dx(dy.shape());
    for (std::size_t r = 0; r < y.size(); r += c) {
      double dot = 0;
      for (std::size_t j = 0; j < c; ++j) dot += dy[r + j] * y[r + j];
      for (std::size_t j = 0; j < c; ++j) dx[r + j] = static_cast<T>(y[r + j] * (dy[r + j] - dot));
    }
    return dx;
  }
  ParamRefs<T> parameters() { return {}; }
};

/// Inverted dropout: active only in train mode, mask drawn from the seed.
template <class T>
class Dropout : public LayerBase<T> {
  using LayerBase<T>::spec_;

 public:
  explicit Dropout(LayerSpec spec) : LayerBase<T>(std::move(spec)) {
    if (!(spec_.rate >= 0.0 && spec_.rate < 1.0)) throw ConfigError(this->who() + ": rate must be in [0, 1)");
  }
  Shape output_shape(const Shape& in) const { return in; }

  Forward<T> forward(const Tensor<T>& x, Mode mode = Mode::eval, std::uint64_t seed = 0) const {
    Cache<T> c = this->make_cache(Tensor<T>(), 0, mode);
    if (mode == Mode::eval || spec_.rate == 0.0) {
      c.aux = Tensor<T>(x.shape(), T(1));
      return {x, std::move(c)};
    }
    Rng rng(seed);
    const T keep_scale = static_cast<T>(1.0 / (1.0 - spec_.rate));
    Tensor<T> mask(x.shape());
    Tensor<T> y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
      mask[i] = rng.uniform() >= spec_.rate ? keep_scale : T(0);
      y[i] = x[i] * mask[i];
    }
    c.aux = std::move(mask);
    return {std::move(y), std::move(c)};
  }

  Tensor<T> backward(const Cache<T>& cache, const Tensor<T>& dy) {
    detail::check_cache(cache, this->id(), 0, this->who());
    expect_shape(dy, cache.aux.shape(), this->who() + " backward");
    Tensor<T> dx(dy.shape());
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] = dy[i] * cache.aux[i];
    return dx;
  }
  ParamRefs<T> parameters() { return {}; }
};

/// [N, ...] -> [N, prod(...)]
template <class T>
class Flatten : public LayerBase<T> {
 public:
  explicit Flatten(LayerSpec spec) : LayerBase<T>(std::move(spec)) {}
  Shape output_shape(const Shape& in) const {
    if (in.empty()) throw DimensionError(this->who() + ": empty shape");
    return {in[0], shape_size(in) / std::max<std::size_t>(in[0], 1)};
  }
  Forward<T> forward(const Tensor<T>& x, Mode mode = Mode::eval) const {
    Cache<T> c = this->make_cache(Tensor<T>(), 0, mode);
    c.in_shape = x.shape();
    return {x.reshaped(output_shape(x.shape())), std::move(c)};
  }
  Tensor<T> backward(const Cache<T>& cache, const Tensor<T>& dy) {
    detail::check_cache(cache, this->id(), 0, this->who());
    return dy.reshaped(cache.in_shape);
  }
  ParamRefs<T> parameters() { return {}; }
};

// ------------------------------------------------------------- dispatch

template <class T>
using AnyLayer = std::variant<Conv2d<T>, MaxPool2x2<T>, ConvTranspose2d<T>, Dense<T>, BatchNorm<T>, Sigmoid<T>,
                              Softmax<T>, Dropout<T>, Flatten<T>>;

template <class T>
AnyLayer<T> make_layer(const LayerSpec& spec, Rng& rng) {
  switch (spec.kind) {
    case LayerKind::conv2d: return Conv2d<T>(spec, rng);
    case LayerKind::maxpool2x2: return MaxPool2x2<T>(spec);
    case LayerKind::conv_transpose2d: return ConvTranspose2d<T>(spec, rng);
    case LayerKind::dense: return Dense<T>(spec, rng);
    case LayerKind::batchnorm: return BatchNorm<T>(spec);
    case LayerKind::sigmoid: return Sigmoid<T>(spec);
    case LayerKind::softmax: return Softmax<T>(spec);
    case LayerKind::dropout: return Dropout<T>(spec);
    case LayerKind::flatten: return Flatten<T>(spec);
  }
  throw ConfigError("make_layer: unknown layer kind");
}

template <class T>
Forward<T> layer_forward(const AnyLayer<T>& layer, const Tensor<T>& x, Mode mode, std::uint64_t seed = 0) {
  return std::visit(
      [&](const auto& l) -> Forward<T> {
        using L = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<L, Dropout<T>>)
          return l.forward(x, mode, seed);
        else
          return l.forward(x, mode);
      },
      layer);
}

template <class T>
Tensor<T> layer_backward(AnyLayer<T>& layer, const Cache<T>& cache, const Tensor<T>& dy) {
  return std::visit([&](auto& l) { return l.backward(cache, dy); }, layer);
}

template <class T>
ParamRefs<T> layer_parameters(AnyLayer<T>& layer) {
  return std::visit([](auto& l) { return l.parameters(); }, layer);
}

template <class T>
Shape layer_output_shape(const AnyLayer<T>& layer, const Shape& in) {
  return std::visit([&](const auto& l) { return l.output_shape(in); }, layer);
}

/// Ordered stack of single-input layers.
template <class T>
class Sequential {
 public:
  Sequential() = default;
  Sequential(const std::vector<LayerSpec>& specs, Rng& rng) {
    for (const auto& s : specs) layers_.push_back(make_layer<T>(s, rng));
  }

  struct Pass {
    Tensor<T> output;
    std::vector<Cache<T>> caches;
  };

  Pass forward(const Tensor<T>& x, Mode mode, std::uint64_t seed = 0) const {
    Pass p;
    p.caches.reserve(layers_.size());
    Tensor<T> cur = x;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      auto f = layer_forward(layers_[i], cur, mode, derive_seed(seed, {i}));
      cur = std::move(f.output);
      p.caches.push_back(std::move(f.cache));
    }
    p.output = std::move(cur);
    return p;
  }

  Tensor<T> backward(const Pass& pass, const Tensor<T>& dy) {
    if (pass.caches.size() != layers_.size()) throw ContractError("Sequential::backward: cache count mismatch");
    Tensor<T> g = dy;
    for (std::size_t i = layers_.size(); i-- > 0;) g = layer_backward(layers_[i], pass.caches[i], g);
    return g;
  }

  Shape output_shape(Shape in) const {
    for (const auto& l : layers_) in = layer_output_shape(l, in);
    return in;
  }

  ParamRefs<T> parameters() {
    ParamRefs<T> out;
    for (auto& l : layers_)
      for (auto* p : layer_parameters(l)) out.push_back(p);
    return out;
  }

  std::vector<AnyLayer<T>>& layers() noexcept { return layers_; }
  const std::vector<AnyLayer<T>>& layers() const noexcept { return layers_; }

 private:
  std::vector<AnyLayer<T>> layers_;
};

}  // namespace amsl::nn
