#pragma once

// Threshold calibration, per-window inference and macro-averaged metrics.

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "amsl/error.hpp"
#include "amsl/model/model.hpp"

namespace amsl {

enum class Label { normal = 0, abnormal = 1 };

inline const char* label_name(Label l) { return l == Label::normal ? "normal" : "abnormal"; }

inline Label parse_label(const std::string& s) {
  if (s == "normal" || s == "0") return Label::normal;
  if (s == "abnormal" || s == "1") return Label::abnormal;
  throw DataError("unknown label '" + s + "'");
}

struct Threshold {
  double mu = 0.0;
  double percentile = 99.0;
  std::size_t count = 0;  ///< calibration sample count
};

/// Linear interpolation between closest ranks: h = (n - 1) p / 100.
inline double percentile_linear(std::vector<double> v, double p) {
  if (v.empty()) throw DataError("percentile: empty sample");
  if (!(p > 0.0 && p <= 100.0)) throw ConfigError("percentile must be in (0, 100]");
  std::sort(v.begin(), v.end());
  const double h = static_cast<double>(v.size() - 1) * p / 100.0;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  if (lo + 1 >= v.size()) return v.back();
  return v[lo] + (h - static_cast<double>(lo)) * (v[lo + 1] - v[lo]);
}

inline Threshold calibrate(const std::vector<double>& errors, double percentile = 99.0) {
  if (errors.empty()) throw DataError("calibrate: no calibration errors");
  for (double e : errors)
    if (!std::isfinite(e)) throw NumericError("calibrate: non-finite reconstruction error");
  return {percentile_linear(errors, percentile), percentile, errors.size()};
}

/// Abnormal iff err > mu; a tie is normal.
inline Label predict(double err, const Threshold& t) { return err > t.mu ? Label::abnormal : Label::normal; }

inline std::vector<Label> predict_all(const std::vector<double>& errors, const Threshold& t) {
  std::vector<Label> out;
  out.reserve(errors.size());
  for (double e : errors) out.push_back(predict(e, t));
  return out;
}

struct ClassMetrics {
  double precision = 0, recall = 0, f1 = 0;
  std::size_t support = 0;
};

struct Metrics {
  ClassMetrics normal, abnormal;
  double m_pre = 0, m_rec = 0, m_f1 = 0, acc = 0;
  std::vector<std::string> warnings;  ///< zero-division cells set to 0
};

inline Metrics evaluate(const std::vector<Label>& pred, const std::vector<Label>& truth) {
  if (pred.size() != truth.size())
    throw DataError("evaluate: " + std::to_string(pred.size()) + " predictions for " + std::to_string(truth.size()) +
                    " labels");
  if (pred.empty()) throw DataError("evaluate: no predictions");
  Metrics m;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == truth[i];
  auto per_class = [&](Label c, const char* name) {
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      tp += pred[i] == c && truth[i] == c;
      fp += pred[i] == c && truth[i] != c;
      fn += pred[i] != c && truth[i] == c;
    }
    ClassMetrics cm;
    cm.support = tp + fn;
    auto ratio = [&](std::size_t num, std::size_t den, const char* what) {
      if (den == 0) {
        m.warnings.push_back(std::string(what) + " of class " + name + " undefined (0/0), set to 0");
        return 0.0;
      }
      return static_cast<double>(num) / static_cast<double>(den);
    };
    cm.precision = ratio(tp, tp + fp, "precision");
    cm.recall = ratio(tp, tp + fn, "recall");
    if (cm.precision + cm.recall > 0.0) {
      cm.f1 = 2.0 * cm.precision * cm.recall / (cm.precision + cm.recall);
    } else {
      m.warnings.push_back(std::string("f1 of class ") + name + " undefined, set to 0");
    }
    return cm;
  };
  m.normal = per_class(Label::normal, "normal");
  m.abnormal = per_class(Label::abnormal, "abnormal");
  m.m_pre = (m.normal.precision + m.abnormal.precision) / 2.0;
  m.m_rec = (m.normal.recall + m.abnormal.recall) / 2.0;
  m.m_f1 = (m.normal.f1 + m.abnormal.f1) / 2.0;
  m.acc = static_cast<double>(correct) / static_cast<double>(pred.size());
  return m;
}

inline nlohmann::json to_json(const Metrics& m) {
  auto cls = [](const ClassMetrics& c) {
    return nlohmann::json{{"precision", c.precision}, {"recall", c.recall}, {"f1", c.f1}, {"support", c.support}};
  };
  return {{"mPre", m.m_pre},          {"mRec", m.m_rec},          {"mF1", m.m_f1},
          {"Acc", m.acc},             {"normal", cls(m.normal)}, {"abnormal", cls(m.abnormal)},
          {"warnings", m.warnings}};
}

inline Metrics metrics_from_json(const nlohmann::json& j) {
  Metrics m;
  try {
    m.m_pre = j.at("mPre").get<double>();
    m.m_rec = j.at("mRec").get<double>();
    m.m_f1 = j.at("mF1").get<double>();
    m.acc = j.at("Acc").get<double>();
    auto cls = [&](const char* k, ClassMetrics& c) {
      if (!j.contains(k)) return;
      const auto& o = j.at(k);
      c.precision = o.at("precision").get<double>();
      c.recall = o.at("recall").get<double>();
      c.f1 = o.at("f1").get<double>();
      c.support = o.at("support").get<std::size_t>();
    };
    cls("normal", m.normal);
    cls("abnormal", m.abnormal);
    if (j.contains("warnings")) m.warnings = j.at("warnings").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("metrics json: ") + e.what());
  }
  return m;
}

// ------------------------------------------------------------ scoring

/// Worker count for batch scoring: AMSL_THREADS if set, else the hardware
/// concurrency, never more than `cap`.
inline std::size_t scoring_threads(std::size_t cap) {
  std::size_t n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("AMSL_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end == env || *end != '\0' || v < 1) throw ConfigError("AMSL_THREADS must be a positive integer");
    n = static_cast<std::size_t>(v);
  }
  return std::max<std::size_t>(1, std::min(n, cap));
}

/// Sum over every variant of the squared reconstruction error, eval mode.
template <class T>
std::vector<double> reconstruction_errors(const AmslModel<T>& model, const std::vector<Window>& windows,
                                          std::size_t batch_size = 64) {
  std::vector<double> out(windows.size());
  if (windows.empty()) return out;
  const std::size_t batches = (windows.size() + batch_size - 1) / batch_size;
  const std::size_t workers = scoring_threads(batches);
  auto run = [&](std::size_t worker) {
    for (std::size_t bi = worker; bi < batches; bi += workers) {
      const std::size_t begin = bi * batch_size, b = std::min(batch_size, windows.size() - begin);
      std::vector<std::size_t> idx(b);
      for (std::size_t i = 0; i < b; ++i) idx[i] = begin + i;
      const auto s = model.forward(assemble_batch<T>(windows, idx, model.config()), b, Mode::eval, 0, false);
      std::copy(s.window_error.begin(), s.window_error.end(), out.begin() + static_cast<std::ptrdiff_t>(begin));
    }
  };
  if (workers == 1) {
    run(0);
    return out;
  }
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&, w] {
      try {
        run(w);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

template <class T>
double reconstruction_error(const AmslModel<T>& model, const Window& w) {
  return reconstruction_errors(model, std::vector<Window>{w}).front();
}

// ------------------------------------------------------------- report

struct DetectionReport {
  std::vector<double> errors;
  std::vector<Label> labels_pred;
  std::optional<std::vector<Label>> labels_true;
  Threshold threshold;
  std::optional<Metrics> metrics;

  static DetectionReport make(std::vector<double> errors, const Threshold& t,
                              std::optional<std::vector<Label>> truth = std::nullopt) {
    DetectionReport r;
    r.labels_pred = predict_all(errors, t);
    r.errors = std::move(errors);
    r.threshold = t;
    if (truth) {
      r.metrics = evaluate(r.labels_pred, *truth);
      r.labels_true = std::move(truth);
    }
    return r;
  }

  /// window_id,error,pred,truth (truth empty when unknown).
  void write_csv(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write '" + path + "'");
    out.precision(17);
    out << "window_id,error,pred,truth\n";
    for (std::size_t i = 0; i < errors.size(); ++i) {
      out << i << ',' << errors[i] << ',' << label_name(labels_pred[i]) << ',';
      if (labels_true) out << label_name((*labels_true)[i]);
      out << '\n';
    }
  }

  nlohmann::json summary() const {
    nlohmann::json j{{"threshold", {{"mu", threshold.mu}, {"percentile", threshold.percentile},
                                    {"count", threshold.count}}},
                     {"windows", errors.size()}};
    std::size_t abnormal = 0;
    for (Label l : labels_pred) abnormal += l == Label::abnormal;
    j["predicted_abnormal"] = abnormal;
    if (metrics) j["metrics"] = to_json(*metrics);
    return j;
  }
};

}  // namespace amsl
