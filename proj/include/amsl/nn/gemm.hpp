#pragma once

#include <cstddef>

#include <Eigen/Core>

namespace amsl::nn::gemm {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using Map = Eigen::Map<RowMat<T>>;
template <class T>
using CMap = Eigen::Map<const RowMat<T>>;

template <class T>
CMap<T> view(const T* p, std::size_t rows, std::size_t cols) {
  return CMap<T>(p, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

template <class T>
Map<T> view(T* p, std::size_t rows, std::size_t cols) {
  return Map<T>(p, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

/// c = a * b   (a: m x k, b: k x n, c: m x n)
template <class T>
void ab(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  view(c, m, n).noalias() = view(a, m, k) * view(b, k, n);
}

/// c += a^T * b   (a: k x m, b: k x n, c: m x n)
template <class T>
void atb_acc(const T* a, const T* b, T* c, std::size_t k, std::size_t m, std::size_t n) {
  view(c, m, n).noalias() += view(a, k, m).transpose() * view(b, k, n);
}

/// c = a * b^T   (a: m x k, b: n x k, c: m x n)
template <class T>
void abt(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  view(c, m, n).noalias() = view(a, m, k) * view(b, n, k).transpose();
}

}  // namespace amsl::nn::gemm
