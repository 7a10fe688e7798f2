// amsl: train, calibrate, detect, eval, synth, sweep and export-weights.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "amsl/io/synth.hpp"
#include "amsl/pipeline.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string dashed(std::string key) {
  for (char& c : key)
    if (c == '_') c = '-';
  return key;
}

/// One string slot per config key, registered as --<key-with-dashes>.
struct ConfigFlags {
  std::string config_path;
  std::map<std::string, std::string> values;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config_path, "JSON config file; flags override it");
    const json defaults = amsl::to_json(amsl::RunConfig{});
    for (const auto& [key, _] : defaults.items())
      cmd->add_option("--" + dashed(key), values[key], "config key '" + key + "'")
          ->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  }

  amsl::RunConfig resolve() const {
    amsl::RunConfig cfg = config_path.empty() ? amsl::RunConfig{} : amsl::load_config(config_path);
    json overrides = json::object();
    for (const auto& [key, raw] : values)
      if (!raw.empty()) overrides[key] = parse_value(key, raw);
    return amsl::config_from_json(overrides, cfg);
  }

  static json parse_value(const std::string& key, const std::string& raw) {
    static const std::vector<std::string> int_lists{"normal_classes", "decoder_channels"};
    if (key == "channel_names") {
      json arr = json::array();
      std::stringstream ss(raw);
      for (std::string item; std::getline(ss, item, ',');) arr.push_back(item);
      return arr;
    }
    if (std::find(int_lists.begin(), int_lists.end(), key) != int_lists.end() && raw.front() != '[') {
      json arr = json::array();
      std::stringstream ss(raw);
      for (std::string item; std::getline(ss, item, ',');) arr.push_back(json::parse(item));
      return arr;
    }
    if (key == "anomaly_pct" && raw == "none") return nullptr;
    try {
      return json::parse(raw);
    } catch (const json::exception&) {
      return raw;  // bare strings such as --ablation full
    }
  }
};

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');)
    if (!item.empty()) out.push_back(item);
  return out;
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw amsl::DataError("cannot create directory '" + dir + "': " + ec.message());
}

void write_json(const std::string& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw amsl::DataError("cannot write '" + path + "'");
  out << j.dump(2) << '\n';
}

amsl::Corpus load_corpus(const std::string& path, const amsl::RunConfig& cfg) {
  amsl::io::CsvSchema schema;
  schema.channels = cfg.channel_names;
  return amsl::partition_corpus(amsl::io::load_csv(path, schema), cfg.normal_classes);
}

amsl::FitOptions progress(bool quiet) {
  amsl::FitOptions o;
  if (!quiet)
    o.on_epoch = [](const amsl::EpochRecord& e) {
      std::cerr << "epoch " << e.epoch << "  recon " << e.recon << "  ce " << e.ce << "  sparse " << e.sparse
                << "  val " << e.val_total << '\n';
    };
  return o;
}

// ------------------------------------------------------------ commands

int cmd_synth(const std::string& out, amsl::io::SynthConfig sc, const std::string& types) {
  if (!types.empty()) {
    sc.anomaly_types.clear();
    for (const auto& t : split_list(types)) sc.anomaly_types.push_back(amsl::io::parse_anomaly(t));
  }
  const auto corpus = amsl::io::synth_generate(sc);
  amsl::io::export_csv(out, corpus.all(), amsl::io::default_channel_names(sc.channels));
  std::cerr << "wrote " << corpus.normals.size() << " normal and " << corpus.anomalies.size() << " anomalous series to "
            << out << " (normal classes 0.." << sc.normal_classes - 1 << ")\n";
  return 0;
}

int cmd_train(const ConfigFlags& flags, const std::string& corpus_path, const std::string& out_dir, bool quiet) {
  amsl::RunConfig cfg = flags.resolve();
  const auto corpus = load_corpus(corpus_path, cfg);
  cfg = amsl::bind_channels(cfg, corpus.channels());
  ensure_dir(out_dir);
  const auto data = amsl::prepare(cfg, corpus);
  std::cerr << "train " << data.train.size() << " / val " << data.val.size() << " / test " << data.test.windows.size()
            << " windows\n";
  amsl::History hist;
  auto tm = amsl::train_model(cfg, data, &hist, progress(quiet));
  amsl::io::save_checkpoint(tm, out_dir + "/model.amsl");
  amsl::write_history_csv(out_dir + "/history.csv", hist);
  amsl::write_alpha_csv(out_dir + "/alpha.csv", tm.alpha_history);
  write_json(out_dir + "/config.json", amsl::to_json(cfg));
  std::cerr << "best epoch " << hist.best_epoch << ", checkpoint " << out_dir << "/model.amsl\n";
  return 0;
}

int cmd_calibrate(const std::string& ckpt, const std::string& corpus_path, double percentile,
                  const std::string& sweep, const std::string& out_dir) {
  auto tm = amsl::io::load_checkpoint(ckpt);
  const auto& cfg = tm.config();
  const auto data = amsl::prepare(cfg, load_corpus(corpus_path, cfg), &tm.normalizer);
  const auto errors = amsl::reconstruction_errors(*tm.model, data.calibration());
  const double p = percentile > 0 ? percentile : cfg.percentile;
  tm.threshold = amsl::calibrate(errors, p);
  json out{{"mu", tm.threshold->mu}, {"percentile", p}, {"count", tm.threshold->count}};
  if (!sweep.empty()) {
    json rows = json::array();
    for (const auto& v : split_list(sweep)) {
      const auto t = amsl::calibrate(errors, std::stod(v));
      rows.push_back({{"percentile", t.percentile}, {"mu", t.mu}});
    }
    out["sweep"] = rows;
  }
  amsl::io::save_checkpoint(tm, ckpt);
  if (!out_dir.empty()) {
    ensure_dir(out_dir);
    write_json(out_dir + "/thresholds.json", out);
  }
  std::cout << out.dump(2) << '\n';
  return 0;
}

int cmd_detect(const std::string& ckpt, const std::string& corpus_path, const std::string& out_dir) {
  const auto tm = amsl::io::load_checkpoint(ckpt);
  if (!tm.threshold) throw amsl::ConfigError("checkpoint is not calibrated: run `amsl calibrate` first");
  const auto& cfg = tm.config();
  amsl::io::CsvSchema schema;
  schema.channels = cfg.channel_names;
  const auto series = amsl::io::load_csv(corpus_path, schema);
  amsl::io::LabeledWindows w;
  bool labeled = !series.empty();
  for (const auto& s : series) {
    labeled = labeled && s.class_id != amsl::io::kUnlabeled;
    const auto label = amsl::io::is_normal(s, cfg.normal_classes) ? amsl::Label::normal : amsl::Label::abnormal;
    amsl::io::append_windows(w, {s}, tm.normalizer, true, cfg.window, cfg.stride, label);
  }
  auto report = amsl::DetectionReport::make(amsl::reconstruction_errors(*tm.model, w.windows), *tm.threshold,
                                            labeled ? std::optional(w.labels) : std::nullopt);
  ensure_dir(out_dir);
  report.write_csv(out_dir + "/detections.csv");
  const json summary = report.summary();
  write_json(out_dir + "/detections.json", summary);
  std::cout << summary.dump(2) << '\n';
  return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& corpus_path, const std::string& out_dir) {
  const auto tm = amsl::io::load_checkpoint(ckpt);
  if (!tm.threshold) throw amsl::ConfigError("checkpoint is not calibrated: run `amsl calibrate` first");
  const auto& cfg = tm.config();
  const auto data = amsl::prepare(cfg, load_corpus(corpus_path, cfg), &tm.normalizer);
  const auto report = amsl::score(tm, data.test);
  ensure_dir(out_dir);
  report.write_csv(out_dir + "/test_detections.csv");
  write_json(out_dir + "/metrics.json", amsl::to_json(*report.metrics));
  std::cout << amsl::to_json(*report.metrics).dump(2) << '\n';
  return 0;
}

std::string sweep_key(const std::string& axis) {
  static const std::map<std::string, std::string> alias{
      {"V", "window"},           {"C", "memory_size"},   {"F", "feature_size"}, {"R", "transforms"},
      {"lambda1", "lambda1"},    {"λ1", "lambda1"},      {"λ₁", "lambda1"},     {"lambda2", "lambda2"},
      {"λ2", "lambda2"},         {"λ₂", "lambda2"},      {"noise_ratio", "noise_ratio"},
      {"anomaly_pct", "anomaly_pct"}, {"window", "window"}, {"memory_size", "memory_size"},
      {"feature_size", "feature_size"}, {"transforms", "transforms"}};
  const auto it = alias.find(axis);
  if (it == alias.end())
    throw amsl::ConfigError("unknown sweep axis '" + axis +
                            "' (expected V, C, F, lambda1, lambda2, noise_ratio, anomaly_pct or R)");
  return it->second;
}

int cmd_sweep(const ConfigFlags& flags, const std::string& corpus_path, const std::string& axis,
              const std::string& values, const std::string& out_dir, bool quiet) {
  const std::string key = sweep_key(axis);
  const auto list = split_list(values);
  if (list.empty()) throw amsl::ConfigError("--sweep-values is empty");
  const amsl::RunConfig base = flags.resolve();
  const auto corpus = load_corpus(corpus_path, base);
  ensure_dir(out_dir);
  std::ofstream out(out_dir + "/sweep.csv");
  if (!out) throw amsl::DataError("cannot write sweep.csv");
  out.precision(17);
  out << "axis,value,mPre,mRec,mF1,Acc,abnormal_f1,mu,status,message\n";
  for (const auto& v : list) {
    out << axis << ',' << v << ',';
    try {
      json j{{key, ConfigFlags::parse_value(key, v)}};
      const auto cfg = amsl::config_from_json(j, base);
      std::cerr << "sweep " << key << " = " << v << '\n';
      const auto r = amsl::run_experiment(cfg, corpus, progress(quiet));
      const auto& m = *r.report.metrics;
      out << m.m_pre << ',' << m.m_rec << ',' << m.m_f1 << ',' << m.acc << ',' << m.abnormal.f1 << ','
          << r.report.threshold.mu << ",ok,\n";
    } catch (const amsl::Error& e) {
      std::string msg = e.what();
      std::replace(msg.begin(), msg.end(), ',', ';');
      std::replace(msg.begin(), msg.end(), '\n', ' ');
      out << ",,,,,,failed," << msg << '\n';
      std::cerr << "sweep value " << v << " failed: " << e.what() << '\n';
    }
    out.flush();
  }
  return 0;
}

int cmd_export(const std::string& ckpt, const std::string& out_dir) {
  auto tm = amsl::io::load_checkpoint(ckpt);
  ensure_dir(out_dir);
  json tensors = json::object();
  for (const auto* p : tm.model->state_tensors())
    tensors[p->name] = {{"shape", p->value.shape()}, {"data", p->value.vec()}};
  write_json(out_dir + "/weights.json", {{"config", amsl::to_json(tm.config())}, {"tensors", tensors}});
  amsl::write_alpha_csv(out_dir + "/alpha.csv", tm.alpha_history);
  std::cerr << "wrote " << out_dir << "/weights.json and alpha.csv\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Unsupervised anomaly detection for multivariate time series"};
  app.require_subcommand(1);
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "no per-epoch progress");

  std::string corpus, out_dir = "run", ckpt, out_file = "corpus.csv";

  ConfigFlags train_flags;
  auto* train = app.add_subcommand("train", "train a model on a CSV corpus");
  train->add_option("--corpus", corpus, "CSV corpus")->required();
  train->add_option("--out-dir", out_dir, "output directory");
  train_flags.attach(train);

  double percentile = 0;
  std::string percentile_sweep;
  auto* calib = app.add_subcommand("calibrate", "set the threshold from training errors");
  calib->add_option("--checkpoint", ckpt)->required();
  calib->add_option("--corpus", corpus)->required();
  calib->add_option("--percentile", percentile, "overrides the checkpoint's percentile");
  calib->add_option("--percentiles", percentile_sweep, "also report thresholds for these, e.g. 90,95,99");
  auto* calib_out = calib->add_option("--out-dir", out_dir, "where to write thresholds.json");

  auto* detect = app.add_subcommand("detect", "score every window of a corpus");
  detect->add_option("--checkpoint", ckpt)->required();
  detect->add_option("--corpus", corpus)->required();
  detect->add_option("--out-dir", out_dir);

  auto* eval = app.add_subcommand("eval", "metrics on the held-out test split");
  eval->add_option("--checkpoint", ckpt)->required();
  eval->add_option("--corpus", corpus)->required();
  eval->add_option("--out-dir", out_dir);

  amsl::io::SynthConfig sc;
  std::string anomaly_types;
  auto* synth = app.add_subcommand("synth", "write the synthetic corpus");
  synth->add_option("--out", out_file);
  synth->add_option("--seed", sc.seed);
  synth->add_option("--channels", sc.channels);
  synth->add_option("--length", sc.length);
  synth->add_option("--period", sc.period);
  synth->add_option("--classes", sc.normal_classes);
  synth->add_option("--series-per-class", sc.series_per_class);
  synth->add_option("--series-per-anomaly", sc.series_per_anomaly);
  synth->add_option("--anomaly-types", anomaly_types, "comma list of burst, dropout, freq_shift");
  synth->add_option("--noise-sd", sc.noise_sd);

  ConfigFlags sweep_flags;
  std::string axis, values;
  auto* sweep = app.add_subcommand("sweep", "train/calibrate/eval once per axis value");
  sweep->add_option("--corpus", corpus)->required();
  sweep->add_option("--out-dir", out_dir);
  sweep->add_option("--sweep-axis", axis, "V, C, F, lambda1, lambda2, noise_ratio, anomaly_pct or R")->required();
  sweep->add_option("--sweep-values", values, "comma-separated values")->required();
  sweep_flags.attach(sweep);

  auto* exp = app.add_subcommand("export-weights", "dump tensors and fusion weights for plotting");
  exp->add_option("--checkpoint", ckpt)->required();
  exp->add_option("--out-dir", out_dir);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : amsl::exit_code_for(amsl::ErrorKind::config);
  }

  try {
    if (*train) return cmd_train(train_flags, corpus, out_dir, quiet);
    if (*calib) return cmd_calibrate(ckpt, corpus, percentile, percentile_sweep, *calib_out ? out_dir : "");
    if (*detect) return cmd_detect(ckpt, corpus, out_dir);
    if (*eval) return cmd_eval(ckpt, corpus, out_dir);
    if (*synth) return cmd_synth(out_file, sc, anomaly_types);
    if (*sweep) return cmd_sweep(sweep_flags, corpus, axis, values, out_dir, quiet);
    if (*exp) return cmd_export(ckpt, out_dir);
  } catch (const amsl::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return amsl::exit_code_for(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
