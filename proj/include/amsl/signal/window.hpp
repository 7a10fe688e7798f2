#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "amsl/error.hpp"
#include "amsl/signal/matrix.hpp"

namespace amsl {

/// One V x N slice of a normalized series: the unit of model input.
struct Window {
  RealMatrix values;
  std::int64_t source_id = 0;
  std::int64_t start_index = 0;

  std::size_t length() const noexcept { return values.rows(); }
  std::size_t channels() const noexcept { return values.cols(); }
};

inline bool all_finite(const RealMatrix& m) {
  for (double v : m.data())
    if (!std::isfinite(v)) return false;
  return true;
}

/// Throws unless the window is finite and exactly V x N.
inline void validate_window(const Window& w, std::size_t length, std::size_t channels) {
  if (w.length() != length || w.channels() != channels)
    throw DimensionError("window " + std::to_string(w.source_id) + "@" + std::to_string(w.start_index) +
                         " is " + std::to_string(w.length()) + "x" + std::to_string(w.channels()) +
                         ", expected " + std::to_string(length) + "x" + std::to_string(channels));
  if (!all_finite(w.values))
    throw DataError("window " + std::to_string(w.source_id) + "@" + std::to_string(w.start_index) +
                    " contains non-finite values");
}

/// Cuts floor((T - V) / stride) + 1 windows; window k starts at k * stride and
/// any trailing remainder shorter than V is dropped.
inline std::vector<Window> sliding_windows(const RealMatrix& series, std::size_t length, std::size_t stride,
                                           std::int64_t source_id = 0) {
  if (stride == 0) throw ConfigError("sliding_windows: stride must be >= 1");
  if (length == 0) throw ConfigError("sliding_windows: window length must be >= 1");
  if (length > series.rows())
    throw DataError("sliding_windows: window length " + std::to_string(length) + " exceeds series length " +
                    std::to_string(series.rows()));
  const std::size_t count = (series.rows() - length) / stride + 1;
  std::vector<Window> out;
  out.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    const std::size_t start = k * stride;
    out.push_back(Window{series.slice_rows(start, length), source_id, static_cast<std::int64_t>(start)});
  }
  return out;
}

}  // namespace amsl
