#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "amsl/error.hpp"

namespace amsl {

/// Center-point least-squares coefficients for a symmetric window of
/// 2 * half + 1 samples and a polynomial of the given degree.
inline std::vector<double> savgol_coefficients(std::size_t half, std::size_t degree) {
  const auto n = static_cast<Eigen::Index>(2 * half + 1);
  const auto k = static_cast<Eigen::Index>(degree + 1);
  Eigen::MatrixXd vander(n, k);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) - static_cast<double>(half);
    double p = 1.0;
    for (Eigen::Index j = 0; j < k; ++j) {
      vander(i, j) = p;
      p *= t;
    }
  }
  // Row 0 of the pseudo-inverse evaluates the fitted polynomial at offset 0.
  const Eigen::MatrixXd pinv = vander.colPivHouseholderQr().solve(Eigen::MatrixXd::Identity(n, n));
  std::vector<double> c(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) c[static_cast<std::size_t>(i)] = pinv(0, i);
  return c;
}

inline void validate_savgol(std::size_t window, std::size_t degree) {
  if (window % 2 == 0) throw ConfigError("savgol: window length " + std::to_string(window) + " must be odd");
  if (window < 3) throw ConfigError("savgol: window length must be >= 3");
  if (degree >= window)
    throw ConfigError("savgol: polynomial degree " + std::to_string(degree) + " must be < window " +
                      std::to_string(window));
}

/// Savitzky-Golay smoothing of one channel. Near the ends the window shrinks
/// symmetrically to the largest size that fits (degree capped at size - 1),
/// so polynomials of degree <= `degree` are reproduced exactly everywhere.
inline std::vector<double> savgol_smooth(const std::vector<double>& x, std::size_t window, std::size_t degree) {
  validate_savgol(window, degree);
  const std::size_t n = x.size();
  const std::size_t half = window / 2;
  std::vector<std::vector<double>> coeffs(half + 1);
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t h = std::min({half, i, n - 1 - i});
    if (h == 0) {
      y[i] = x[i];
      continue;
    }
    auto& c = coeffs[h];
    if (c.empty()) c = savgol_coefficients(h, std::min(degree, 2 * h));
    double acc = 0.0;
    for (std::size_t j = 0; j < c.size(); ++j) acc += c[j] * x[i - h + j];
    y[i] = acc;
  }
  return y;
}

}  // namespace amsl
