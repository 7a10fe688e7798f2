#pragma once

// Labeled series, the CSV corpus format, series-level 5:1:4 splitting, test
// anomaly subsampling and training-noise injection.
//
// CSV header contract: series_id,label[,split],<channel>...
//   series_id  integer grouping consecutive or scattered rows into one series
//   label      integer class id, constant within a series (optional; absent = unlabeled, class -1)
//   split      optional: train | val | test | unassigned
// Rows of a series appear in time order.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "amsl/detect/detect.hpp"
#include "amsl/error.hpp"
#include "amsl/rng.hpp"
#include "amsl/signal/matrix.hpp"
#include "amsl/signal/normalize.hpp"
#include "amsl/signal/window.hpp"

namespace amsl::io {

enum class SplitTag { train, val, test, unassigned };

inline const char* split_name(SplitTag s) {
  switch (s) {
    case SplitTag::train: return "train";
    case SplitTag::val: return "val";
    case SplitTag::test: return "test";
    case SplitTag::unassigned: return "unassigned";
  }
  return "?";
}

inline SplitTag parse_split(const std::string& s) {
  for (SplitTag t : {SplitTag::train, SplitTag::val, SplitTag::test, SplitTag::unassigned})
    if (s == split_name(t)) return t;
  throw DataError("unknown split tag '" + s + "'");
}

inline constexpr int kUnlabeled = -1;

struct LabeledSeries {
  RealMatrix values;  // T x N
  std::int64_t series_id = 0;
  int class_id = 0;
  SplitTag split = SplitTag::unassigned;
};

struct CsvSchema {
  std::vector<std::string> channels;  ///< empty = every non-key column, in file order
  std::string id_column = "series_id";
  std::string label_column = "label";
  std::string split_column = "split";
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline std::string trim(std::string s) {
  const auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

inline double parse_real(const std::string& cell, std::size_t line, const std::string& column) {
  const std::string t = trim(cell);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty()) throw DataError("line " + std::to_string(line) + ": missing value in column '" + column + "'");
  if (ec != std::errc() || ptr != t.data() + t.size())
    throw DataError("line " + std::to_string(line) + ": non-numeric cell '" + t + "' in column '" + column + "'");
  if (!std::isfinite(v))
    throw DataError("line " + std::to_string(line) + ": non-finite value in column '" + column + "'");
  return v;
}

inline std::int64_t parse_int(const std::string& cell, std::size_t line, const std::string& column) {
  const std::string t = trim(cell);
  std::int64_t v = 0;
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || ec != std::errc() || ptr != t.data() + t.size())
    throw DataError("line " + std::to_string(line) + ": expected an integer in column '" + column + "', got '" + t +
                    "'");
  return v;
}

}  // namespace detail

/// Reads a corpus; series are returned in order of first appearance.
inline std::vector<LabeledSeries> load_csv(const std::string& path, const CsvSchema& schema = {}) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open corpus '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw DataError(path + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  std::vector<std::string> header = detail::split_csv_line(line);
  for (auto& h : header) h = detail::trim(h);

  int id_col = -1, label_col = -1, split_col = -1;
  std::vector<std::string> data_cols;
  std::vector<int> data_idx;
  for (std::size_t i = 0; i < header.size(); ++i) {
    const auto& h = header[i];
    if (h == schema.id_column) id_col = static_cast<int>(i);
    else if (h == schema.label_column) label_col = static_cast<int>(i);
    else if (h == schema.split_column) split_col = static_cast<int>(i);
    else {
      data_cols.push_back(h);
      data_idx.push_back(static_cast<int>(i));
    }
  }
  if (id_col < 0) throw DataError(path + ": header must contain '" + schema.id_column + "'");

  // Column index for each schema channel, in schema order.
  std::vector<int> channel_idx;
  std::vector<std::string> channel_names = schema.channels.empty() ? data_cols : schema.channels;
  for (const auto& name : channel_names) {
    const auto it = std::find(data_cols.begin(), data_cols.end(), name);
    if (it == data_cols.end()) throw DataError(path + ": channel '" + name + "' not in header");
    channel_idx.push_back(data_idx[static_cast<std::size_t>(it - data_cols.begin())]);
  }
  for (const auto& name : data_cols)
    if (std::find(channel_names.begin(), channel_names.end(), name) == channel_names.end())
      throw DataError(path + ": unknown column '" + name + "'");
  if (channel_idx.empty()) throw DataError(path + ": no channel columns");

  struct Acc {
    std::vector<double> data;
    int label;
    SplitTag split;
  };
  std::vector<std::int64_t> order;
  std::map<std::int64_t, Acc> acc;
  const std::size_t n = channel_idx.size();
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != header.size())
      throw DataError(path + ": line " + std::to_string(lineno) + " has " + std::to_string(cells.size()) +
                      " cells, header has " + std::to_string(header.size()));
    const auto id = detail::parse_int(cells[static_cast<std::size_t>(id_col)], lineno, schema.id_column);
    const int label =
        label_col < 0
            ? kUnlabeled
            : static_cast<int>(detail::parse_int(cells[static_cast<std::size_t>(label_col)], lineno, schema.label_column));
    const SplitTag split =
        split_col >= 0 ? parse_split(detail::trim(cells[static_cast<std::size_t>(split_col)])) : SplitTag::unassigned;
    auto [it, fresh] = acc.try_emplace(id, Acc{{}, label, split});
    if (fresh) order.push_back(id);
    if (it->second.label != label)
      throw DataError(path + ": line " + std::to_string(lineno) + ": series " + std::to_string(id) +
                      " changes label");
    if (it->second.split != split)
      throw DataError(path + ": line " + std::to_string(lineno) + ": series " + std::to_string(id) +
                      " changes split");
    for (std::size_t c = 0; c < n; ++c)
      it->second.data.push_back(
          detail::parse_real(cells[static_cast<std::size_t>(channel_idx[c])], lineno, channel_names[c]));
  }
  std::vector<LabeledSeries> out;
  out.reserve(order.size());
  for (auto id : order) {
    auto& a = acc.at(id);
    const std::size_t rows = a.data.size() / n;
    out.push_back({RealMatrix(rows, n, std::move(a.data)), id, a.label, a.split});
  }
  return out;
}

/// Writes the corpus with the split column; values at round-trip precision.
inline void export_csv(const std::string& path, const std::vector<LabeledSeries>& series,
                       const std::vector<std::string>& channel_names) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path + "'");
  out.precision(17);
  out << "series_id,label,split";
  for (const auto& c : channel_names) out << ',' << c;
  out << '\n';
  for (const auto& s : series) {
    if (s.values.cols() != channel_names.size()) throw DimensionError("export_csv: channel count mismatch");
    for (std::size_t r = 0; r < s.values.rows(); ++r) {
      out << s.series_id << ',' << s.class_id << ',' << split_name(s.split);
      for (std::size_t c = 0; c < s.values.cols(); ++c) out << ',' << s.values(r, c);
      out << '\n';
    }
  }
}

inline std::vector<std::string> default_channel_names(std::size_t n) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back("ch" + std::to_string(i));
  return out;
}

/// Normal iff class_id is listed; an empty list makes every class normal.
inline bool is_normal(const LabeledSeries& s, const std::vector<int>& normal_classes) {
  return normal_classes.empty() ||
         std::find(normal_classes.begin(), normal_classes.end(), s.class_id) != normal_classes.end();
}

// --------------------------------------------------------------- split

struct SeriesSplit {
  std::vector<LabeledSeries> train, val, test_normal, test_anomaly;
};

/// Whole-series 5:1:4 partition of the normals after a seeded shuffle; every
/// anomaly series goes to test. Series carrying explicit split tags keep them.
inline SeriesSplit split(const std::vector<LabeledSeries>& normals, const std::vector<LabeledSeries>& anomalies,
                         std::uint64_t seed) {
  if (normals.empty()) throw DataError("split: no normal series");
  SeriesSplit out;
  std::vector<const LabeledSeries*> untagged;
  for (const auto& s : normals) {
    switch (s.split) {
      case SplitTag::train: out.train.push_back(s); break;
      case SplitTag::val: out.val.push_back(s); break;
      case SplitTag::test: out.test_normal.push_back(s); break;
      case SplitTag::unassigned: untagged.push_back(&s); break;
    }
  }
  for (const auto& s : anomalies) {
    if (s.split == SplitTag::train || s.split == SplitTag::val)
      throw DataError("split: anomalous series " + std::to_string(s.series_id) + " is tagged for " +
                      split_name(s.split));
    out.test_anomaly.push_back(s);
    out.test_anomaly.back().split = SplitTag::test;
  }
  Rng rng(derive_seed(seed, {0x73706C74ULL}));
  const auto order = shuffled_indices(untagged.size(), rng);
  const std::size_t n = untagged.size();
  const std::size_t n_train = n * 5 / 10, n_val = n / 10;
  for (std::size_t i = 0; i < n; ++i) {
    LabeledSeries s = *untagged[order[i]];
    if (i < n_train) {
      s.split = SplitTag::train;
      out.train.push_back(std::move(s));
    } else if (i < n_train + n_val) {
      s.split = SplitTag::val;
      out.val.push_back(std::move(s));
    } else {
      s.split = SplitTag::test;
      out.test_normal.push_back(std::move(s));
    }
  }
  return out;
}

// ----------------------------------------------------------- windowing

struct LabeledWindows {
  std::vector<Window> windows;
  std::vector<Label> labels;

  std::size_t count(Label l) const { return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), l)); }
};

inline void append_windows(LabeledWindows& dst, const std::vector<LabeledSeries>& series, const Normalizer& norm,
                           bool clip, std::size_t length, std::size_t stride, Label label) {
  for (const auto& s : series) {
    auto ws = sliding_windows(norm.apply(s.values, clip), length, stride, s.series_id);
    for (auto& w : ws) {
      dst.windows.push_back(std::move(w));
      dst.labels.push_back(label);
    }
  }
}

/// Windows of one split partition, normalized with the training statistics.
struct WindowedSplit {
  Normalizer normalizer;
  std::vector<Window> train, val;
  LabeledWindows test;
  std::vector<Window> train_clean;  ///< train before noise injection; empty when none was injected

  const std::vector<Window>& calibration() const { return train_clean.empty() ? train : train_clean; }
};

/// Normalizes with `fixed` when given (a trained model's statistics), else
/// fits on the training series.
inline WindowedSplit window_split(const SeriesSplit& s, std::size_t length, std::size_t stride,
                                  const Normalizer* fixed = nullptr) {
  if (s.train.empty()) throw DataError("no training series after the split");
  WindowedSplit out;
  if (fixed) {
    out.normalizer = *fixed;
  } else {
    std::vector<RealMatrix> train_values;
    for (const auto& t : s.train) train_values.push_back(t.values);
    out.normalizer = Normalizer::fit(train_values);
  }
  LabeledWindows tmp;
  append_windows(tmp, s.train, out.normalizer, false, length, stride, Label::normal);
  out.train = std::move(tmp.windows);
  tmp = {};
  append_windows(tmp, s.val, out.normalizer, true, length, stride, Label::normal);
  out.val = std::move(tmp.windows);
  append_windows(out.test, s.test_normal, out.normalizer, true, length, stride, Label::normal);
  append_windows(out.test, s.test_anomaly, out.normalizer, true, length, stride, Label::abnormal);
  return out;
}

/// Anomalies needed for `pct` percent of the test set given `normal` normals:
/// ceil(normal * r / (1 - r)), guarded against representation error.
inline std::size_t anomaly_target(std::size_t normal, double pct) {
  if (!(pct > 0.0 && pct < 100.0)) throw ConfigError("anomaly percentage must be in (0, 100)");
  const double r = pct / 100.0;
  const double exact = static_cast<double>(normal) * r / (1.0 - r);
  return static_cast<std::size_t>(std::ceil(exact - 1e-9));
}

/// Keeps every normal test window and a seeded subset of anomalies so that
/// anomalies make up `pct` percent; throws if not enough anomalies exist.
inline LabeledWindows subsample_anomalies(const LabeledWindows& test, double pct, std::uint64_t seed) {
  const std::size_t normal = test.count(Label::normal), available = test.count(Label::abnormal);
  const std::size_t target = anomaly_target(normal, pct);
  if (target > available)
    throw DataError("anomaly percentage " + std::to_string(pct) + "% needs " + std::to_string(target) +
                    " anomalous windows, only " + std::to_string(available) + " available");
  std::vector<std::size_t> anomalous;
  for (std::size_t i = 0; i < test.labels.size(); ++i)
    if (test.labels[i] == Label::abnormal) anomalous.push_back(i);
  Rng rng(derive_seed(seed, {0x616E6F6DULL}));
  rng.shuffle(anomalous);
  std::vector<char> keep(test.labels.size(), 0);
  for (std::size_t i = 0; i < target; ++i) keep[anomalous[i]] = 1;
  LabeledWindows out;
  for (std::size_t i = 0; i < test.labels.size(); ++i)
    if (test.labels[i] == Label::normal || keep[i]) {
      out.windows.push_back(test.windows[i]);
      out.labels.push_back(test.labels[i]);
    }
  return out;
}

/// Adds N(0, sigma^2) to every value of round(ratio * count) seed-chosen windows.
inline std::vector<Window> inject_noise(std::vector<Window> windows, double ratio, double sigma, std::uint64_t seed,
                                        std::vector<std::size_t>* chosen = nullptr) {
  if (!(ratio >= 0.0 && ratio <= 1.0)) throw ConfigError("noise ratio must be in [0, 1]");
  if (!(sigma >= 0.0)) throw ConfigError("noise sigma must be >= 0");
  const auto k = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(windows.size())));
  Rng pick(derive_seed(seed, {0x6E6F6973ULL}));
  auto order = shuffled_indices(windows.size(), pick);
  order.resize(k);
  std::sort(order.begin(), order.end());
  for (std::size_t i : order) {
    Rng rng(derive_seed(seed, {0x6E6F6973ULL, static_cast<std::uint64_t>(windows[i].source_id),
                               static_cast<std::uint64_t>(windows[i].start_index)}));
    for (double& v : windows[i].values.data()) v += sigma * rng.normal();
  }
  if (chosen) *chosen = order;
  return windows;
}

}  // namespace amsl::io
