#pragma once

// Desk-scale synthetic corpus: normal classes are sinusoid mixtures with
// class-specific frequencies; anomalies are normal carriers with injected
// bursts, dropouts or a frequency shift.

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "amsl/error.hpp"
#include "amsl/io/corpus.hpp"
#include "amsl/rng.hpp"

namespace amsl::io {

enum class AnomalyType { burst, dropout, freq_shift };

inline const char* anomaly_name(AnomalyType a) {
  switch (a) {
    case AnomalyType::burst: return "burst";
    case AnomalyType::dropout: return "dropout";
    case AnomalyType::freq_shift: return "freq_shift";
  }
  return "?";
}

inline AnomalyType parse_anomaly(const std::string& s) {
  for (AnomalyType a : {AnomalyType::burst, AnomalyType::dropout, AnomalyType::freq_shift})
    if (s == anomaly_name(a)) return a;
  throw ConfigError("unknown anomaly type '" + s + "'");
}

struct SynthConfig {
  std::size_t channels = 3;
  std::size_t length = 672;  ///< timesteps per series
  std::size_t period = 64;   ///< samples per unit of class frequency (one window at V=64)
  std::size_t normal_classes = 4;
  std::size_t series_per_class = 20;
  std::vector<AnomalyType> anomaly_types{AnomalyType::burst, AnomalyType::freq_shift};
  std::size_t series_per_anomaly = 10;
  double noise_sd = 0.05;
  double base_frequency = 1.5;  ///< cycles per period for class 0; class k adds k
  double frequency_shift = 6.0;  ///< cycles per period added by a freq_shift anomaly
  std::size_t burst_every = 32;
  std::size_t burst_length = 3;
  double burst_amplitude = 1.5;
  std::uint64_t seed = 0;
};

struct SynthCorpus {
  std::vector<LabeledSeries> normals;
  std::vector<LabeledSeries> anomalies;  ///< class_id = normal_classes + anomaly type index
  std::vector<RealMatrix> carriers;      ///< anomaly-free carrier of each anomaly
  std::vector<double> class_frequency;   ///< dominant cycles per period of each normal class

  std::vector<LabeledSeries> all() const {
    auto out = normals;
    out.insert(out.end(), anomalies.begin(), anomalies.end());
    return out;
  }
  std::vector<int> normal_class_ids() const {
    std::vector<int> ids;
    for (std::size_t k = 0; k < class_frequency.size(); ++k) ids.push_back(static_cast<int>(k));
    return ids;
  }
};

namespace detail {

struct Carrier {
  double frequency;
  std::vector<double> phase, gain;
};

/// Channel phase offsets shared by every series of a class.
inline std::vector<double> class_phases(std::uint64_t seed, std::size_t cls, std::size_t channels) {
  Rng rng(derive_seed(seed, {0x70686173ULL, cls}));
  std::vector<double> out;
  for (std::size_t ch = 0; ch < channels; ++ch) out.push_back(rng.uniform(0.0, 2.0 * std::numbers::pi));
  return out;
}

/// Class phases plus one per-series time offset; small per-channel gain jitter.
inline Carrier draw_carrier(double frequency, const std::vector<double>& phases, Rng& rng) {
  Carrier c{frequency, {}, {}};
  const double offset = rng.uniform(0.0, 2.0 * std::numbers::pi);
  for (double p : phases) {
    c.phase.push_back(p + offset);
    c.gain.push_back(rng.uniform(0.9, 1.1));
  }
  return c;
}

/// Channel c mixes the fundamental with its (c + 2)-th harmonic at weight 0.3.
inline RealMatrix render(const Carrier& c, const SynthConfig& cfg, std::uint64_t noise_seed) {
  Rng noise(noise_seed);
  RealMatrix m(cfg.length, cfg.channels);
  const double w = 2.0 * std::numbers::pi * c.frequency / static_cast<double>(cfg.period);
  for (std::size_t t = 0; t < cfg.length; ++t)
    for (std::size_t ch = 0; ch < cfg.channels; ++ch) {
      const double x = w * static_cast<double>(t) + c.phase[ch];
      const double harmonic = static_cast<double>(ch + 2);
      m(t, ch) = c.gain[ch] * (std::sin(x) + 0.3 * std::sin(harmonic * x)) + cfg.noise_sd * noise.normal();
    }
  return m;
}

}  // namespace detail

/// Deterministic in (cfg, seed) on every platform.
inline SynthCorpus synth_generate(const SynthConfig& cfg) {
  if (cfg.channels == 0 || cfg.length == 0 || cfg.period == 0 || cfg.normal_classes == 0)
    throw ConfigError("synth: channels, length, period and class count must be positive");
  if (cfg.burst_every == 0 || cfg.burst_length == 0 || cfg.burst_length > cfg.burst_every)
    throw ConfigError("synth: burst_length must be in [1, burst_every]");
  SynthCorpus out;
  std::int64_t next_id = 0;
  for (std::size_t k = 0; k < cfg.normal_classes; ++k) {
    const double f = cfg.base_frequency + static_cast<double>(k);
    out.class_frequency.push_back(f);
    for (std::size_t i = 0; i < cfg.series_per_class; ++i) {
      const std::int64_t id = next_id++;
      Rng rng(derive_seed(cfg.seed, {0x6E6F726DULL, static_cast<std::uint64_t>(id)}));
      const auto carrier = detail::draw_carrier(f, detail::class_phases(cfg.seed, k, cfg.channels), rng);
      out.normals.push_back(
          {detail::render(carrier, cfg, rng.next_u64()), id, static_cast<int>(k), SplitTag::unassigned});
    }
  }
  for (std::size_t a = 0; a < cfg.anomaly_types.size(); ++a) {
    const AnomalyType type = cfg.anomaly_types[a];
    for (std::size_t i = 0; i < cfg.series_per_anomaly; ++i) {
      const std::int64_t id = next_id++;
      Rng rng(derive_seed(cfg.seed, {0x616E6F6DULL, static_cast<std::uint64_t>(id)}));
      const std::size_t cls = static_cast<std::size_t>(rng.below(cfg.normal_classes));
      const auto carrier =
          detail::draw_carrier(out.class_frequency[cls], detail::class_phases(cfg.seed, cls, cfg.channels), rng);
      const std::uint64_t noise_seed = rng.next_u64();
      const RealMatrix clean = detail::render(carrier, cfg, noise_seed);
      RealMatrix values = clean;
      const std::size_t offset = static_cast<std::size_t>(rng.below(cfg.burst_every));
      switch (type) {
        case AnomalyType::burst:
          for (std::size_t start = offset; start < cfg.length; start += cfg.burst_every) {
            const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
            for (std::size_t t = start; t < std::min(cfg.length, start + cfg.burst_length); ++t)
              for (std::size_t ch = 0; ch < cfg.channels; ++ch) values(t, ch) += sign * cfg.burst_amplitude;
          }
          break;
        case AnomalyType::dropout:
          // Flat-lines the signal at a level away from the carrier's range.
          for (std::size_t start = offset; start < cfg.length; start += cfg.burst_every)
            for (std::size_t t = start; t < std::min(cfg.length, start + 2 * cfg.burst_length); ++t)
              for (std::size_t ch = 0; ch < cfg.channels; ++ch) values(t, ch) = -cfg.burst_amplitude;
          break;
        case AnomalyType::freq_shift: {
          auto shifted = carrier;
          shifted.frequency += cfg.frequency_shift;
          values = detail::render(shifted, cfg, noise_seed);
          break;
        }
      }
      out.anomalies.push_back(
          {std::move(values), id, static_cast<int>(cfg.normal_classes + a), SplitTag::unassigned});
      out.carriers.push_back(clean);
    }
  }
  return out;
}

/// Fraction of elements of `a` differing from `carrier` by more than `delta`.
inline double differing_fraction(const RealMatrix& a, const RealMatrix& carrier, double delta) {
  if (a.rows() != carrier.rows() || a.cols() != carrier.cols())
    throw DimensionError("differing_fraction: shape mismatch");
  std::size_t n = 0;
  for (std::size_t i = 0; i < a.size(); ++i) n += std::abs(a.data()[i] - carrier.data()[i]) > delta;
  return static_cast<double>(n) / static_cast<double>(a.size());
}

}  // namespace amsl::io
