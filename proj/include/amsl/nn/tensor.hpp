#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "amsl/error.hpp"

namespace amsl::nn {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

/// Dense row-major tensor. Convolutional activations use NHWC layout.
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0)) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}
  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_size(shape_))
      throw DimensionError("Tensor: data length " + std::to_string(data_.size()) + " does not match shape " +
                           shape_str(shape_));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::vector<T>& vec() noexcept { return data_; }
  const std::vector<T>& vec() const noexcept { return data_; }
  std::span<T> span() noexcept { return data_; }
  std::span<const T> span() const noexcept { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  T operator[](std::size_t i) const { return data_[i]; }

  /// Same data under a new shape of equal element count.
  Tensor reshaped(Shape s) const {
    if (shape_size(s) != size())
      throw DimensionError("reshape " + shape_str(shape_) + " -> " + shape_str(s) + ": element count differs");
    return Tensor(std::move(s), data_);
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  /// Leading-axis slice [begin, begin + count).
  Tensor slice0(std::size_t begin, std::size_t count) const {
    Shape s = shape_;
    const std::size_t inner = size() / std::max<std::size_t>(shape_.at(0), 1);
    s[0] = count;
    std::vector<T> d(data_.begin() + static_cast<std::ptrdiff_t>(begin * inner),
                     data_.begin() + static_cast<std::ptrdiff_t>((begin + count) * inner));
    return Tensor(std::move(s), std::move(d));
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  template <class U>
  Tensor<U> cast() const {
    return Tensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<T> data_;
};

template <class T>
void expect_shape(const Tensor<T>& t, const Shape& expected, const std::string& who) {
  if (t.shape() != expected)
    throw DimensionError(who + ": expected shape " + shape_str(expected) + ", got " + shape_str(t.shape()));
}

template <class T>
void expect_rank(const Tensor<T>& t, std::size_t rank, const std::string& who) {
  if (t.rank() != rank)
    throw DimensionError(who + ": expected rank " + std::to_string(rank) + " input, got " + shape_str(t.shape()));
}

/// Leading-axis concatenation of equally shaped slices.
template <class T>
Tensor<T> stack0(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) return {};
  Shape s = parts.front().shape();
  std::vector<T> d;
  std::size_t lead = 0;
  for (const auto& p : parts) {
    if (p.rank() != s.size() || !std::equal(s.begin() + 1, s.end(), p.shape().begin() + 1))
      throw DimensionError("stack0: inconsistent slice shapes");
    lead += p.dim(0);
    d.insert(d.end(), p.vec().begin(), p.vec().end());
  }
  s[0] = lead;
  return Tensor<T>(std::move(s), std::move(d));
}

/// Channel (last-axis) concatenation of two tensors with equal leading extents.
template <class T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != b.rank() || a.rank() == 0 || !std::equal(a.shape().begin(), a.shape().end() - 1, b.shape().begin()))
    throw DimensionError("concat: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                         " differ outside the channel axis");
  const std::size_t ca = a.shape().back(), cb = b.shape().back();
  const std::size_t rows = a.size() / std::max<std::size_t>(ca, 1);
  Shape s = a.shape();
  s.back() = ca + cb;
  Tensor<T> out(s);
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(a.data() + r * ca, ca, out.data() + r * (ca + cb));
    std::copy_n(b.data() + r * cb, cb, out.data() + r * (ca + cb) + ca);
  }
  return out;
}

/// Inverse of concat_channels: splits the last axis at `first` channels.
template <class T>
std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>& x, std::size_t first) {
  const std::size_t c = x.shape().back();
  if (first > c) throw DimensionError("split_channels: split point beyond channel count");
  const std::size_t rows = x.size() / std::max<std::size_t>(c, 1);
  Shape sa = x.shape(), sb = x.shape();
  sa.back() = first;
  sb.back() = c - first;
  Tensor<T> a(sa), b(sb);
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(x.data() + r * c, first, a.data() + r * first);
    std::copy_n(x.data() + r * c + first, c - first, b.data() + r * (c - first));
  }
  return {std::move(a), std::move(b)};
}

template <class T>
void add_inplace(Tensor<T>& dst, const Tensor<T>& src) {
  if (dst.size() != src.size())
    throw DimensionError("add_inplace: " + shape_str(dst.shape()) + " vs " + shape_str(src.shape()));
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace amsl::nn
