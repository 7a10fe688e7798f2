#pragma once

// Mini-batch Adam training with best-validation model selection.

#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "amsl/error.hpp"
#include "amsl/model/model.hpp"

namespace amsl {

struct EpochRecord {
  std::size_t epoch = 0;  ///< 1-based
  double recon = 0, ce = 0, sparse = 0, total = 0;
  double val_total = 0;      ///< validation recon + lambda1 * ce
  std::vector<double> alpha;  ///< eval-mode fusion weights after the epoch
};

struct History {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;  ///< 0 = no epoch ran
  double best_val = std::numeric_limits<double>::infinity();
};

struct FitOptions {
  std::function<void(const EpochRecord&)> on_epoch;
};

/// Mean loss terms over `windows` in eval mode, without gradients.
template <class T>
LossBreakdown evaluate_loss(const AmslModel<T>& model, const std::vector<Window>& windows,
                            std::size_t batch_size = 64) {
  LossBreakdown sum;
  if (windows.empty()) return sum;
  const auto& cfg = model.config();
  for (std::size_t begin = 0; begin < windows.size(); begin += batch_size) {
    const std::size_t b = std::min(batch_size, windows.size() - begin);
    std::vector<std::size_t> idx(b);
    for (std::size_t i = 0; i < b; ++i) idx[i] = begin + i;
    const auto s = model.forward(assemble_batch<T>(windows, idx, cfg), b, Mode::eval);
    const double w = static_cast<double>(b);
    sum.recon += s.loss.recon * w;
    sum.ce += s.loss.ce * w;
    sum.sparse += s.loss.sparse * w;
  }
  const double n = static_cast<double>(windows.size());
  sum.recon /= n;
  sum.ce /= n;
  sum.sparse /= n;
  sum.total = sum.recon + cfg.lambda1 * sum.ce + cfg.lambda2 * sum.sparse;
  return sum;
}

/// Trains for config().epochs epochs and restores the parameters of the epoch
/// with the lowest validation recon + lambda1 * ce (training total when there
/// is no validation data). Zero epochs leaves the model untouched.
template <class T>
History fit(AmslModel<T>& model, const std::vector<Window>& train, const std::vector<Window>& val,
            const FitOptions& opts = {}) {
  const RunConfig& cfg = model.config();
  History hist;
  if (cfg.epochs == 0) return hist;
  if (train.empty()) throw DataError("fit: no training windows");
  for (const auto& w : train) validate_window(w, cfg.window, cfg.channels);
  for (const auto& w : val) validate_window(w, cfg.window, cfg.channels);

  const auto tensors = model.state_tensors();
  std::vector<std::vector<T>> best(tensors.size());
  const nn::AdamConfig adam = cfg.adam();

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    Rng shuffle_rng(derive_seed(cfg.seed, {0x73687566ULL, epoch}));
    const auto order = shuffled_indices(train.size(), shuffle_rng);
    EpochRecord rec;
    rec.epoch = epoch;
    std::size_t batch_no = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size, ++batch_no) {
      const std::size_t b = std::min(cfg.batch_size, order.size() - begin);
      const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(begin),
                                         order.begin() + static_cast<std::ptrdiff_t>(begin + b));
      LossBreakdown l;
      try {
        l = model.accumulate(assemble_batch<T>(train, idx, cfg), b, derive_seed(cfg.seed, {epoch, batch_no}));
        model.step(adam);
      } catch (const NumericError& e) {
        throw NumericError(std::string(e.what()) + " [epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(batch_no) + "]");
      }
      const double w = static_cast<double>(b);
      rec.recon += l.recon * w;
      rec.ce += l.ce * w;
      rec.sparse += l.sparse * w;
    }
    const double n = static_cast<double>(train.size());
    rec.recon /= n;
    rec.ce /= n;
    rec.sparse /= n;
    rec.total = rec.recon + cfg.lambda1 * rec.ce + cfg.lambda2 * rec.sparse;
    if (val.empty()) {
      rec.val_total = rec.total;
    } else {
      const auto v = evaluate_loss(model, val);
      rec.val_total = v.recon + cfg.lambda1 * v.ce;
    }
    if (!std::isfinite(rec.total) || !std::isfinite(rec.val_total))
      throw NumericError("fit: non-finite loss at epoch " + std::to_string(epoch));
    for (T a : model.fusion_weights()) rec.alpha.push_back(static_cast<double>(a));

    if (rec.val_total < hist.best_val) {
      hist.best_val = rec.val_total;
      hist.best_epoch = epoch;
      for (std::size_t i = 0; i < tensors.size(); ++i) best[i] = tensors[i]->value.vec();
    }
    hist.epochs.push_back(rec);
    if (opts.on_epoch) opts.on_epoch(rec);
  }

  for (std::size_t i = 0; i < tensors.size(); ++i) {
    tensors[i]->value.vec() = best[i];
    ++tensors[i]->version;
  }
  return hist;
}

}  // namespace amsl
