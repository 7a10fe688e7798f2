#pragma once

// End-to-end run: corpus -> split/windows -> train -> calibrate -> evaluate.

#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "amsl/detect/detect.hpp"
#include "amsl/error.hpp"
#include "amsl/io/checkpoint.hpp"
#include "amsl/io/corpus.hpp"
#include "amsl/model/trainer.hpp"

namespace amsl {

struct Corpus {
  std::vector<io::LabeledSeries> normals, anomalies;
  std::size_t channels() const { return normals.empty() ? 0 : normals.front().values.cols(); }
};

/// Sorts series into normal / anomalous by the configured normal classes.
inline Corpus partition_corpus(const std::vector<io::LabeledSeries>& series, const std::vector<int>& normal_classes) {
  Corpus c;
  for (const auto& s : series) {
    if (s.class_id == io::kUnlabeled) throw DataError("series " + std::to_string(s.series_id) + " has no label");
    (io::is_normal(s, normal_classes) ? c.normals : c.anomalies).push_back(s);
  }
  return c;
}

/// Fills channels from the corpus when unset and checks it otherwise.
inline RunConfig bind_channels(RunConfig cfg, std::size_t corpus_channels) {
  if (cfg.channels == 0) cfg.channels = corpus_channels;
  if (cfg.channels != corpus_channels)
    throw ConfigError("config: channels = " + std::to_string(cfg.channels) + " but the corpus has " +
                      std::to_string(corpus_channels));
  validate(cfg);
  return cfg;
}

/// Split, windowing, optional training noise and test anomaly subsampling.
/// Deterministic in cfg.seed.
inline io::WindowedSplit prepare(const RunConfig& cfg, const Corpus& corpus, const Normalizer* fixed = nullptr) {
  auto s = io::window_split(io::split(corpus.normals, corpus.anomalies, cfg.seed), cfg.window, cfg.stride, fixed);
  if (cfg.noise_ratio > 0.0) {
    s.train_clean = s.train;
    s.train = io::inject_noise(std::move(s.train), cfg.noise_ratio, cfg.noise_inject_sigma, cfg.seed);
  }
  if (cfg.anomaly_pct) s.test = io::subsample_anomalies(s.test, *cfg.anomaly_pct, cfg.seed);
  return s;
}

inline void write_history_csv(const std::string& path, const History& h) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path + "'");
  out.precision(17);
  out << "epoch,recon,ce,sparse,total,val_total\n";
  for (const auto& e : h.epochs)
    out << e.epoch << ',' << e.recon << ',' << e.ce << ',' << e.sparse << ',' << e.total << ',' << e.val_total
        << '\n';
}

inline void write_alpha_csv(const std::string& path, const std::vector<std::vector<double>>& alpha) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path + "'");
  out.precision(17);
  const std::size_t n = alpha.empty() ? 0 : alpha.front().size();
  out << "epoch";
  for (std::size_t i = 0; i < n / 2; ++i) out << ",alpha_g" << i;
  for (std::size_t i = 0; i < n / 2; ++i) out << ",alpha_l" << i;
  out << '\n';
  for (std::size_t e = 0; e < alpha.size(); ++e) {
    out << e + 1;
    for (double a : alpha[e]) out << ',' << a;
    out << '\n';
  }
}

inline io::TrainedModel train_model(const RunConfig& cfg, const io::WindowedSplit& data, History* history = nullptr,
                                    const FitOptions& opts = {}) {
  io::TrainedModel tm;
  tm.model = std::make_unique<AmslModel<float>>(cfg);
  tm.normalizer = data.normalizer;
  History h = fit(*tm.model, data.train, data.val, opts);
  for (const auto& e : h.epochs) tm.alpha_history.push_back(e.alpha);
  if (history) *history = std::move(h);
  return tm;
}

/// Threshold from the model's errors on the training windows. Pass
/// WindowedSplit::calibration() so injected noise does not move the threshold.
inline Threshold calibrate_model(io::TrainedModel& tm, const std::vector<Window>& train, double percentile) {
  tm.threshold = calibrate(reconstruction_errors(*tm.model, train), percentile);
  return *tm.threshold;
}

inline DetectionReport score(const io::TrainedModel& tm, const io::LabeledWindows& windows) {
  if (!tm.threshold) throw ConfigError("model is not calibrated: run `amsl calibrate` first");
  return DetectionReport::make(reconstruction_errors(*tm.model, windows.windows), *tm.threshold, windows.labels);
}

struct RunResult {
  io::TrainedModel model;
  History history;
  DetectionReport report;
};

/// One full train / calibrate / evaluate cycle.
inline RunResult run_experiment(const RunConfig& cfg, const Corpus& corpus, const FitOptions& opts = {}) {
  const RunConfig bound = bind_channels(cfg, corpus.channels());
  const auto data = prepare(bound, corpus);
  RunResult r;
  r.model = train_model(bound, data, &r.history, opts);
  calibrate_model(r.model, data.calibration(), bound.percentile);
  r.report = score(r.model, data.test);
  return r;
}

}  // namespace amsl
