#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "amsl/error.hpp"
#include "amsl/signal/matrix.hpp"

namespace amsl {

/// Per-channel min-max statistics. Fitted on training series only; applied
/// to validation/test data with optional clipping to bound outliers.
class Normalizer {
 public:
  static constexpr double kClipLow = -0.5;
  static constexpr double kClipHigh = 1.5;

  Normalizer() = default;
  Normalizer(std::vector<double> min, std::vector<double> max) : min_(std::move(min)), max_(std::move(max)) {
    if (min_.size() != max_.size()) throw DimensionError("Normalizer: min/max length mismatch");
  }

  /// Fits channel extrema over every row of every series.
  template <class Range>
  static Normalizer fit(const Range& series) {
    std::vector<double> lo, hi;
    for (const RealMatrix& s : series) {
      if (lo.empty()) {
        lo.assign(s.cols(), std::numeric_limits<double>::infinity());
        hi.assign(s.cols(), -std::numeric_limits<double>::infinity());
      }
      if (s.cols() != lo.size()) throw DimensionError("Normalizer::fit: channel count differs between series");
      for (std::size_t r = 0; r < s.rows(); ++r)
        for (std::size_t c = 0; c < s.cols(); ++c) {
          const double v = s(r, c);
          if (!std::isfinite(v))
            throw DataError("normalize: non-finite value in channel " + std::to_string(c) + " at row " +
                            std::to_string(r));
          lo[c] = std::min(lo[c], v);
          hi[c] = std::max(hi[c], v);
        }
    }
    if (lo.empty()) throw DataError("Normalizer::fit: no series to fit");
    return Normalizer(std::move(lo), std::move(hi));
  }

  static Normalizer fit(const RealMatrix& series) { return fit(std::vector<RealMatrix>{series}); }

  /// Maps each channel to (x - min) / (max - min); constant channels map to 0.
  RealMatrix apply(const RealMatrix& series, bool clip) const {
    if (series.cols() != min_.size())
      throw DimensionError("Normalizer::apply: series has " + std::to_string(series.cols()) + " channels, fitted " +
                           std::to_string(min_.size()));
    RealMatrix out(series.rows(), series.cols());
    for (std::size_t r = 0; r < series.rows(); ++r)
      for (std::size_t c = 0; c < series.cols(); ++c) {
        const double v = series(r, c);
        if (!std::isfinite(v))
          throw DataError("normalize: non-finite value in channel " + std::to_string(c) + " at row " +
                          std::to_string(r));
        const double span = max_[c] - min_[c];
        double y = span > 0.0 ? (v - min_[c]) / span : 0.0;
        if (clip) y = std::clamp(y, kClipLow, kClipHigh);
        out(r, c) = y;
      }
    return out;
  }

  const std::vector<double>& min() const noexcept { return min_; }
  const std::vector<double>& max() const noexcept { return max_; }
  std::size_t channels() const noexcept { return min_.size(); }
  bool fitted() const noexcept { return !min_.empty(); }

 private:
  std::vector<double> min_, max_;
};

/// Self-fitted per-channel min-max scaling to [0, 1].
inline RealMatrix normalize(const RealMatrix& series) {
  if (series.rows() == 0) throw DataError("normalize: empty series");
  return Normalizer::fit(series).apply(series, false);
}

}  // namespace amsl
