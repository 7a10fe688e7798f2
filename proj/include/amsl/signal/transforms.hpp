#pragma once

// The six self-supervised signal transformations and the expansion of a
// window into its R labeled variants.

#include <algorithm>
#include <array>
#include <cstdint>
#include <numeric>
#include <string>
#include <string_view>
#include <vector>

#include "amsl/error.hpp"
#include "amsl/rng.hpp"
#include "amsl/signal/savitzky_golay.hpp"
#include "amsl/signal/window.hpp"

namespace amsl {

enum class TransformKind : std::uint8_t { raw, noise, reverse, permute, scale, negate, smooth };

inline constexpr std::array<TransformKind, 7> kAllTransforms = {
    TransformKind::raw,   TransformKind::noise,  TransformKind::reverse, TransformKind::permute,
    TransformKind::scale, TransformKind::negate, TransformKind::smooth};

inline constexpr std::array<double, 4> kScaleFactors = {0.5, 0.8, 1.5, 2.0};

inline std::string_view transform_name(TransformKind k) {
  switch (k) {
    case TransformKind::raw: return "raw";
    case TransformKind::noise: return "noise";
    case TransformKind::reverse: return "reverse";
    case TransformKind::permute: return "permute";
    case TransformKind::scale: return "scale";
    case TransformKind::negate: return "negate";
    case TransformKind::smooth: return "smooth";
  }
  return "?";
}

/// Variant set for a reduced transformation count. Transforms are discarded
/// in the order noise, scale, permute, reverse, so R ranges over 3..7.
inline std::vector<TransformKind> transforms_for_count(std::size_t r) {
  if (r < 3 || r > 7) throw ConfigError("transform count R must be in [3, 7], got " + std::to_string(r));
  std::vector<TransformKind> kinds(kAllTransforms.begin(), kAllTransforms.end());
  constexpr std::array<TransformKind, 4> drop = {TransformKind::noise, TransformKind::scale, TransformKind::permute,
                                                 TransformKind::reverse};
  for (std::size_t i = 0; i < 7 - r; ++i) std::erase(kinds, drop[i]);
  return kinds;
}

struct TransformConfig {
  double noise_sigma = 0.1;
  std::size_t permute_segments = 4;
  std::size_t sg_window = 5;
  std::size_t sg_poly = 2;
  std::vector<TransformKind> kinds{kAllTransforms.begin(), kAllTransforms.end()};
  std::uint64_t seed = 0;
};

/// R stacked variants with pseudo-labels 0..R-1 (label i tags variant i).
struct TransformedBatch {
  std::vector<Window> variants;
  std::vector<int> pseudo_labels;
  std::vector<TransformKind> kinds;

  std::size_t size() const noexcept { return variants.size(); }
};

inline Window t_noise(const Window& w, double sigma, std::uint64_t seed) {
  if (!(sigma > 0.0)) throw ConfigError("t_noise: sigma must be > 0");
  Rng rng(seed);
  Window out = w;
  for (double& v : out.values.data()) v += sigma * rng.normal();
  return out;
}

inline Window t_reverse(const Window& w) {
  Window out = w;
  const std::size_t n = w.length();
  for (std::size_t r = 0; r < n; ++r) {
    auto src = w.values.row(n - 1 - r);
    std::copy(src.begin(), src.end(), out.values.row(r).begin());
  }
  return out;
}

/// Splits rows into `segments` contiguous chunks (the first V mod segments
/// chunks get one extra row) and emits them in the given chunk order.
inline Window t_permute_with(const Window& w, std::size_t segments, const std::vector<std::size_t>& order) {
  const std::size_t n = w.length();
  if (segments < 2 || segments > n)
    throw ConfigError("t_permute: segments " + std::to_string(segments) + " outside [2, " + std::to_string(n) + "]");
  if (order.size() != segments) throw ConfigError("t_permute: order length must equal segment count");
  std::vector<std::size_t> begin(segments + 1, 0);
  const std::size_t base = n / segments, extra = n % segments;
  for (std::size_t s = 0; s < segments; ++s) begin[s + 1] = begin[s] + base + (s < extra ? 1 : 0);

  Window out = w;
  std::size_t dst = 0;
  for (std::size_t s : order) {
    if (s >= segments) throw ConfigError("t_permute: chunk index out of range");
    for (std::size_t r = begin[s]; r < begin[s + 1]; ++r, ++dst) {
      auto src = w.values.row(r);
      std::copy(src.begin(), src.end(), out.values.row(dst).begin());
    }
  }
  return out;
}

/// Uniformly random non-identity chunk permutation, deterministic per seed.
inline Window t_permute(const Window& w, std::size_t segments, std::uint64_t seed) {
  if (segments < 2 || segments > w.length())
    throw ConfigError("t_permute: segments " + std::to_string(segments) + " outside [2, " +
                      std::to_string(w.length()) + "]");
  Rng rng(seed);
  std::vector<std::size_t> order(segments);
  bool identity = true;
  while (identity) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(order);
    identity = std::is_sorted(order.begin(), order.end());
  }
  return t_permute_with(w, segments, order);
}

/// The scalar t_scale would apply for this seed.
inline double scale_factor_for(std::uint64_t seed) {
  Rng rng(seed);
  return kScaleFactors[rng.below(kScaleFactors.size())];
}

inline Window t_scale(const Window& w, std::uint64_t seed) {
  const double s = scale_factor_for(seed);
  Window out = w;
  for (double& v : out.values.data()) v *= s;
  return out;
}

inline Window t_negate(const Window& w) {
  Window out = w;
  for (double& v : out.values.data()) v = -v;
  return out;
}

inline Window t_smooth(const Window& w, std::size_t sg_window, std::size_t sg_poly) {
  validate_savgol(sg_window, sg_poly);
  if (sg_window > w.length())
    throw ConfigError("t_smooth: sg_window " + std::to_string(sg_window) + " exceeds window length " +
                      std::to_string(w.length()));
  Window out = w;
  for (std::size_t c = 0; c < w.channels(); ++c) {
    const auto smoothed = savgol_smooth(w.values.column(c), sg_window, sg_poly);
    for (std::size_t r = 0; r < w.length(); ++r) out.values(r, c) = smoothed[r];
  }
  return out;
}

inline Window apply_transform(const Window& w, TransformKind kind, const TransformConfig& cfg) {
  const std::uint64_t seed = derive_seed(cfg.seed, {static_cast<std::uint64_t>(kind)});
  switch (kind) {
    case TransformKind::raw: return w;
    case TransformKind::noise: return t_noise(w, cfg.noise_sigma, seed);
    case TransformKind::reverse: return t_reverse(w);
    case TransformKind::permute: return t_permute(w, cfg.permute_segments, seed);
    case TransformKind::scale: return t_scale(w, seed);
    case TransformKind::negate: return t_negate(w);
    case TransformKind::smooth: return t_smooth(w, cfg.sg_window, cfg.sg_poly);
  }
  throw ContractError("apply_transform: unknown transform");
}

/// Stacks the configured variants (default: raw, noise, reverse, permute,
/// scale, negate, smooth) with pseudo-labels equal to their position.
inline TransformedBatch expand(const Window& w, const TransformConfig& cfg) {
  if (cfg.kinds.empty() || cfg.kinds.front() != TransformKind::raw)
    throw ConfigError("expand: the variant list must start with the raw window");
  if (!all_finite(w.values)) throw DataError("expand: window contains non-finite values");
  TransformedBatch out;
  out.variants.reserve(cfg.kinds.size());
  for (std::size_t i = 0; i < cfg.kinds.size(); ++i) {
    out.variants.push_back(apply_transform(w, cfg.kinds[i], cfg));
    out.pseudo_labels.push_back(static_cast<int>(i));
  }
  out.kinds = cfg.kinds;
  return out;
}

/// Per-window transformation seed, fixed across epochs.
inline std::uint64_t window_seed(std::uint64_t global_seed, const Window& w) {
  return derive_seed(global_seed, {static_cast<std::uint64_t>(w.source_id), static_cast<std::uint64_t>(w.start_index),
                                   0x7472616E73ULL});
}

}  // namespace amsl
