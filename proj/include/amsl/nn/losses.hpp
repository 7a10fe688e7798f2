#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "amsl/error.hpp"
#include "amsl/nn/layers.hpp"

namespace amsl::nn {

template <class T>
struct ClassificationLoss {
  double loss = 0.0;   ///< mean cross-entropy over rows
  Tensor<T> probs;     ///< softmax of the logits
  Tensor<T> grad;      ///< d(loss)/d(logits) = (probs - onehot) / rows
};

/// Softmax followed by mean cross-entropy against integer labels.
template <class T>
ClassificationLoss<T> softmax_cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels) {
  expect_rank(logits, 2, "softmax_cross_entropy");
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  if (labels.size() != n)
    throw DimensionError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(n) + " rows");
  ClassificationLoss<T> out;
  out.probs = Softmax<T>::apply(logits);
  out.grad = out.probs;
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const int y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= c) throw ContractError("softmax_cross_entropy: label out of range");
    // log-softmax computed from the logits for accuracy at saturated probabilities
    double mx = logits[i * c];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, static_cast<double>(logits[i * c + j]));
    double lse = 0.0;
    for (std::size_t j = 0; j < c; ++j) lse += std::exp(static_cast<double>(logits[i * c + j]) - mx);
    total += -(static_cast<double>(logits[i * c + static_cast<std::size_t>(y)]) - mx - std::log(lse));
    out.grad[i * c + static_cast<std::size_t>(y)] -= T(1);
  }
  const T inv_n = T(1) / static_cast<T>(n);
  for (auto& g : out.grad.vec()) g *= inv_n;
  out.loss = total / static_cast<double>(n);
  return out;
}

}  // namespace amsl::nn
