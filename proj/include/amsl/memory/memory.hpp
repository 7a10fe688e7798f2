#pragma once

// Cosine-scored softmax addressing over a learnable C x F memory matrix and
// the entropy sparsity penalty on the addressing weights.

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "amsl/error.hpp"
#include "amsl/nn/gemm.hpp"
#include "amsl/nn/parameter.hpp"
#include "amsl/nn/tensor.hpp"
#include "amsl/rng.hpp"

namespace amsl::memory {

using nn::Parameter;
using nn::Shape;
using nn::Tensor;

enum class MemoryRole { global, local };

/// Query or memory rows with a norm below this are degenerate.
inline constexpr double kDegenerateNorm = 1e-12;
/// Rows with a norm below this are re-initialized after an update.
inline constexpr double kDeadRowNorm = 1e-8;

template <class T>
struct MemoryMatrix {
  Parameter<T> items;  // C x F
  MemoryRole role = MemoryRole::global;
  int transform_index = -1;  // local memories only

  std::size_t slots() const { return items.value.dim(0); }
  std::size_t features() const { return items.value.dim(1); }

  /// Rows i.i.d. uniform on [-1/sqrt(F), 1/sqrt(F)].
  static MemoryMatrix init(std::size_t slots, std::size_t features, MemoryRole role, int transform_index,
                           Rng& rng) {
    if (slots == 0 || features == 0) throw ConfigError("memory: C and F must be >= 1");
    const std::string name = role == MemoryRole::global ? std::string("memory.global")
                                                        : "memory.local." + std::to_string(transform_index);
    Tensor<T> v({slots, features});
    fill_rows(v, 0, slots, rng);
    return MemoryMatrix{Parameter<T>(name, std::move(v)), role, transform_index};
  }

  /// Re-draws any row whose norm collapsed below kDeadRowNorm. Returns how many.
  std::size_t revive_dead_rows(Rng& rng) {
    std::size_t revived = 0;
    const std::size_t f = features();
    for (std::size_t r = 0; r < slots(); ++r) {
      double n2 = 0;
      for (std::size_t j = 0; j < f; ++j) n2 += double(items.value[r * f + j]) * items.value[r * f + j];
      if (std::sqrt(n2) < kDeadRowNorm) {
        fill_rows(items.value, r, 1, rng);
        ++revived;
      }
    }
    if (revived) ++items.version;
    return revived;
  }

 private:
  static void fill_rows(Tensor<T>& v, std::size_t first, std::size_t count, Rng& rng) {
    const std::size_t f = v.dim(1);
    const double limit = 1.0 / std::sqrt(static_cast<double>(f));
    for (std::size_t i = first * f; i < (first + count) * f; ++i) v[i] = static_cast<T>(rng.uniform(-limit, limit));
  }
};

/// Cosine similarity z.m / (|z| |m|).
template <class T>
double score(std::span<const T> z, std::span<const T> m) {
  if (z.size() != m.size()) throw DimensionError("score: query and memory item lengths differ");
  double dot = 0, nz = 0, nm = 0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    dot += double(z[i]) * m[i];
    nz += double(z[i]) * z[i];
    nm += double(m[i]) * m[i];
  }
  nz = std::sqrt(nz);
  nm = std::sqrt(nm);
  if (nz < kDegenerateNorm || nm < kDegenerateNorm) throw NumericError("score: degenerate (zero-norm) operand");
  return dot / (nz * nm);
}

/// -sum w log w with 0 log 0 = 0 (natural log).
template <class T>
double sparsity_loss(std::span<const T> w) {
  double h = 0;
  for (T v : w) {
    if (v < T(0)) throw ContractError("sparsity_loss: negative weight");
    if (v > T(0)) h -= double(v) * std::log(double(v));
  }
  return h;
}

template <class T>
struct AddressCache {
  std::uint64_t memory_version = 0;
  const Parameter<T>* memory = nullptr;
  bool valid = false;
  Tensor<T> query_unit;   // P x F, rows z / |z|
  std::vector<T> query_norm;
  Tensor<T> memory_unit;  // C x F
  std::vector<T> memory_norm;
};

/// Addressing of P queries at once: weights P x C, reads P x F.
template <class T>
struct AddressResult {
  Tensor<T> read;
  Tensor<T> weights;
  AddressCache<T> cache;

  /// Sum of per-query entropies.
  double sparsity() const {
    const std::size_t c = weights.dim(1);
    double s = 0;
    for (std::size_t r = 0; r < weights.dim(0); ++r) s += sparsity_loss<T>(weights.span().subspan(r * c, c));
    return s;
  }
};

namespace detail {
template <class T>
Tensor<T> unit_rows(const Tensor<T>& x, std::vector<T>& norms, const char* what, const std::string& ctx) {
  const std::size_t rows = x.dim(0), f = x.dim(1);
  Tensor<T> u(x.shape());
  norms.resize(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double n2 = 0;
    for (std::size_t j = 0; j < f; ++j) n2 += double(x[r * f + j]) * x[r * f + j];
    const double n = std::sqrt(n2);
    if (n < kDegenerateNorm)
      throw NumericError(std::string("address: degenerate ") + what + " (zero norm) at row " + std::to_string(r) + ctx);
    norms[r] = static_cast<T>(n);
    for (std::size_t j = 0; j < f; ++j) u[r * f + j] = static_cast<T>(x[r * f + j] / n);
  }
  return u;
}
}  // namespace detail

/// w = softmax over cosine scores against every memory row; read = w M.
/// `queries` is P x F (any leading shape flattened by the caller).
template <class T>
AddressResult<T> address(const Tensor<T>& queries, const MemoryMatrix<T>& mem, const std::string& context = {}) {
  if (queries.rank() != 2 || queries.dim(1) != mem.features())
    throw DimensionError("address: queries " + nn::shape_str(queries.shape()) + " do not match memory F=" +
                         std::to_string(mem.features()));
  const std::size_t p = queries.dim(0), c = mem.slots(), f = mem.features();
  AddressResult<T> out;
  auto& cache = out.cache;
  cache.query_unit = detail::unit_rows(queries, cache.query_norm, "query", context);
  cache.memory_unit = detail::unit_rows(mem.items.value, cache.memory_norm, "memory item", context);
  cache.memory = &mem.items;
  cache.memory_version = mem.items.version;
  cache.valid = true;

  out.weights = Tensor<T>({p, c});
  nn::gemm::abt(cache.query_unit.data(), cache.memory_unit.data(), out.weights.data(), p, f, c);
  for (std::size_t r = 0; r < p; ++r) {
    T* w = out.weights.data() + r * c;
    T mx = w[0];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, w[j]);
    double sum = 0;
    for (std::size_t j = 0; j < c; ++j) {
      w[j] = std::exp(w[j] - mx);
      sum += w[j];
    }
    for (std::size_t j = 0; j < c; ++j) w[j] = static_cast<T>(w[j] / sum);
  }
  out.read = Tensor<T>({p, f});
  nn::gemm::ab(out.weights.data(), mem.items.value.data(), out.read.data(), p, c, f);
  return out;
}

/// Single-query convenience form.
template <class T>
AddressResult<T> address(std::span<const T> z, const MemoryMatrix<T>& mem) {
  return address(Tensor<T>({1, z.size()}, std::vector<T>(z.begin(), z.end())), mem);
}

template <class T>
struct AddressGrads {
  Tensor<T> grad_queries;  // P x F
  Tensor<T> grad_memory;   // C x F
};

/// Exact gradients of  <grad_read, read> + scale * sum(entropy(w))  w.r.t. the
/// queries and the memory items, through the softmax and cosine scoring.
template <class T>
AddressGrads<T> address_backward(const AddressResult<T>& fwd, const Tensor<T>& grad_read, double grad_sparsity_scale,
                                 const MemoryMatrix<T>& mem) {
  const auto& cache = fwd.cache;
  if (!cache.valid) throw ContractError("address_backward: missing cache");
  if (cache.memory != &mem.items || cache.memory_version != mem.items.version)
    throw ContractError("address_backward: stale cache for memory '" + mem.items.name + "'");
  const std::size_t p = fwd.weights.dim(0), c = fwd.weights.dim(1), f = mem.features();
  nn::expect_shape(grad_read, Shape{p, f}, "address_backward grad_read");

  // dW = G M^T + scale * dH/dw,  dH/dw = -(log w + 1)
  Tensor<T> dw({p, c});
  nn::gemm::abt(grad_read.data(), mem.items.value.data(), dw.data(), p, f, c);
  const T s = static_cast<T>(grad_sparsity_scale);
  if (grad_sparsity_scale != 0.0)
    for (std::size_t i = 0; i < dw.size(); ++i) {
      const T w = fwd.weights[i];
      if (w > T(0)) dw[i] += s * -(std::log(w) + T(1));
    }
  // softmax: dS = W * (dW - rowsum(dW * W))
  Tensor<T> ds({p, c});
  for (std::size_t r = 0; r < p; ++r) {
    double dot = 0;
    for (std::size_t j = 0; j < c; ++j) dot += double(dw[r * c + j]) * fwd.weights[r * c + j];
    for (std::size_t j = 0; j < c; ++j)
      ds[r * c + j] = static_cast<T>(fwd.weights[r * c + j] * (dw[r * c + j] - dot));
  }

  AddressGrads<T> g;
  g.grad_memory = Tensor<T>({c, f});
  nn::gemm::atb_acc(fwd.weights.data(), grad_read.data(), g.grad_memory.data(), p, c, f);

  Tensor<T> dzn({p, f});
  nn::gemm::ab(ds.data(), cache.memory_unit.data(), dzn.data(), p, c, f);
  Tensor<T> dmn({c, f});
  nn::gemm::atb_acc(ds.data(), cache.query_unit.data(), dmn.data(), p, c, f);

  // Through the row normalization u = x / |x|:  dx = (du - u (u . du)) / |x|
  auto unnormalize = [f](const Tensor<T>& du, const Tensor<T>& u, const std::vector<T>& norms, T* dst) {
    for (std::size_t r = 0; r < norms.size(); ++r) {
      double dot = 0;
      for (std::size_t j = 0; j < f; ++j) dot += double(du[r * f + j]) * u[r * f + j];
      for (std::size_t j = 0; j < f; ++j)
        dst[r * f + j] += static_cast<T>((du[r * f + j] - u[r * f + j] * dot) / norms[r]);
    }
  };
  g.grad_queries = Tensor<T>({p, f});
  unnormalize(dzn, cache.query_unit, cache.query_norm, g.grad_queries.data());
  unnormalize(dmn, cache.memory_unit, cache.memory_norm, g.grad_memory.data());
  return g;
}

}  // namespace amsl::memory
