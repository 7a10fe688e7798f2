#pragma once

#include <cstdint>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "amsl/error.hpp"
#include "amsl/nn/adam.hpp"
#include "amsl/signal/transforms.hpp"

namespace amsl {

/// Model variants of the ablation study.
enum class Ablation { cae, cae_mem, cae_ssl, cae_ssl_mem, full };

inline std::string ablation_name(Ablation a) {
  switch (a) {
    case Ablation::cae: return "cae";
    case Ablation::cae_mem: return "cae-mem";
    case Ablation::cae_ssl: return "cae-ssl";
    case Ablation::cae_ssl_mem: return "cae-ssl-mem";
    case Ablation::full: return "full";
  }
  return "?";
}

inline Ablation parse_ablation(const std::string& s) {
  for (Ablation a : {Ablation::cae, Ablation::cae_mem, Ablation::cae_ssl, Ablation::cae_ssl_mem, Ablation::full})
    if (ablation_name(a) == s) return a;
  throw ConfigError("unknown ablation '" + s + "' (expected cae, cae-mem, cae-ssl, cae-ssl-mem or full)");
}

/// Which components an ablation enables.
struct AblationTraits {
  bool ssl;       ///< all transformed variants plus the pseudo-label classifier
  bool memory;    ///< global/local memories between encoder and decoders
  bool adaptive;  ///< learned fusion gate instead of 1:1 fusion
};

inline AblationTraits traits_of(Ablation a) {
  switch (a) {
    case Ablation::cae: return {false, false, false};
    case Ablation::cae_mem: return {false, true, false};
    case Ablation::cae_ssl: return {true, false, false};
    case Ablation::cae_ssl_mem: return {true, true, false};
    case Ablation::full: return {true, true, true};
  }
  return {true, true, true};
}

/// Spatial extents (height = time, width = channels).
struct Extent {
  std::size_t h = 0, w = 0;
  friend bool operator==(const Extent&, const Extent&) = default;
};

struct DecoderStage {
  std::size_t channels, stride;
  Extent out;
};

/// Activation extents through the network, derived from the config.
struct ShapePlan {
  Extent input, conv1, pool1, conv2, code;
  std::size_t code_channels = 0;
  std::vector<DecoderStage> decoder;
};

struct RunConfig {
  // data
  std::size_t window = 128;
  std::size_t stride = 64;
  std::size_t channels = 0;  ///< 0 = take from the corpus
  std::vector<std::string> channel_names;
  std::vector<int> normal_classes;  ///< empty = every class is normal
  // architecture
  std::size_t memory_size = 800;
  std::size_t feature_size = 64;
  std::size_t encoder_channels = 32;
  std::vector<std::size_t> decoder_channels{128, 64, 32, 1};
  std::size_t classifier_hidden = 128;
  double dropout = 0.5;
  std::string padding = "same";
  bool share_decoders = false;
  double bn_momentum = 0.99;
  Ablation ablation = Ablation::full;
  std::size_t transforms = 7;  ///< R, 3..7
  // objective and optimizer
  double lambda1 = 1.0;
  double lambda2 = 0.0002;
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t epochs = 100;
  std::size_t batch_size = 32;
  // transformations
  double noise_sigma = 0.1;
  std::size_t permute_segments = 4;
  std::size_t sg_window = 5;
  std::size_t sg_poly = 2;
  // detection and experiment harness
  double percentile = 99.0;
  double noise_ratio = 0.0;          ///< fraction of training windows given extra noise
  double noise_inject_sigma = 0.3;
  std::optional<double> anomaly_pct;  ///< test-set anomaly percentage target
  std::uint64_t seed = 0;

  AblationTraits traits() const { return traits_of(ablation); }

  /// Variant kinds the model trains on: raw only without SSL.
  std::vector<TransformKind> variant_kinds() const {
    if (!traits().ssl) return {TransformKind::raw};
    return transforms_for_count(transforms);
  }

  TransformConfig transform_config(std::uint64_t window_seed) const {
    TransformConfig t;
    t.noise_sigma = noise_sigma;
    t.permute_segments = permute_segments;
    t.sg_window = sg_window;
    t.sg_poly = sg_poly;
    t.kinds = variant_kinds();
    t.seed = window_seed;
    return t;
  }

  nn::AdamConfig adam() const { return {lr, beta1, beta2, adam_eps}; }

  bool same_padding() const { return padding == "same"; }
};

/// Computes every activation extent; throws ConfigError when the layers do not
/// compose for this window shape.
inline ShapePlan plan_shapes(const RunConfig& c) {
  if (c.padding != "same" && c.padding != "valid")
    throw ConfigError("padding must be 'same' or 'valid', got '" + c.padding + "'");
  if (c.window == 0 || c.channels == 0) throw ConfigError("window length and channel count must be positive");
  ShapePlan p;
  p.input = {c.window, c.channels};
  const bool same = c.same_padding();
  auto conv = [&](Extent e, const char* what) {
    if (same) return e;
    if (e.h < 4 || e.w < 4)
      throw ConfigError(std::string("shape composition: ") + what + " input " + std::to_string(e.h) + "x" +
                        std::to_string(e.w) + " is smaller than the 4x4 kernel");
    return Extent{e.h - 3, e.w - 3};
  };
  auto pool = [&](Extent e, const char* what) {
    Extent o = same ? Extent{(e.h + 1) / 2, (e.w + 1) / 2} : Extent{e.h / 2, e.w / 2};
    if (o.h == 0 || o.w == 0)
      throw ConfigError(std::string("shape composition: ") + what + " input " + std::to_string(e.h) + "x" +
                        std::to_string(e.w) + " is too small for 2x2 pooling");
    return o;
  };
  p.conv1 = conv(p.input, "conv1");
  p.pool1 = pool(p.conv1, "pool1");
  p.conv2 = conv(p.pool1, "conv2");
  p.code = pool(p.conv2, "pool2");
  p.code_channels = c.feature_size;

  if (c.decoder_channels.size() != 4 || c.decoder_channels.back() != 1)
    throw ConfigError("decoder_channels must list four layers ending in 1");
  const std::size_t strides[4] = {1, 2, 2, 1};
  Extent cur = p.code;
  for (std::size_t i = 0; i < 4; ++i) {
    const Extent full{(cur.h - 1) * strides[i] + 4, (cur.w - 1) * strides[i] + 4};
    Extent target = full;
    if (same) {
      const Extent targets[4] = {p.code, p.pool1, p.conv1, p.input};
      target = targets[i];
    } else if (i == 3) {
      target = p.input;
    }
    if (target.h > full.h || target.w > full.w)
      throw ConfigError("shape composition: decoder layer " + std::to_string(i + 1) + " reaches at most " +
                        std::to_string(full.h) + "x" + std::to_string(full.w) + " but needs " +
                        std::to_string(target.h) + "x" + std::to_string(target.w));
    p.decoder.push_back({c.decoder_channels[i], strides[i], target});
    cur = target;
  }
  return p;
}

/// Range checks plus shape composition. Returns the plan on success.
inline ShapePlan validate(const RunConfig& c) {
  auto fail = [](const std::string& m) { throw ConfigError("config: " + m); };
  if (c.stride == 0) fail("stride must be >= 1");
  if (c.memory_size == 0 || c.feature_size == 0) fail("memory_size and feature_size must be >= 1");
  if (c.encoder_channels == 0 || c.classifier_hidden == 0) fail("layer widths must be >= 1");
  for (auto d : c.decoder_channels)
    if (d == 0) fail("decoder_channels must be positive");
  if (!(c.dropout >= 0.0 && c.dropout < 1.0)) fail("dropout must be in [0, 1)");
  if (c.lambda1 < 0.0 || c.lambda2 < 0.0) fail("lambda1 and lambda2 must be >= 0");
  if (!(c.lr >= 0.0)) fail("lr must be >= 0");
  if (c.batch_size == 0) fail("batch_size must be >= 1");
  if (!(c.percentile > 0.0 && c.percentile <= 100.0)) fail("percentile must be in (0, 100]");
  if (!(c.noise_sigma > 0.0)) fail("noise_sigma must be > 0");
  if (c.permute_segments < 2 || c.permute_segments > c.window) fail("permute_segments must be in [2, window]");
  validate_savgol(c.sg_window, c.sg_poly);
  if (c.sg_window > c.window) fail("sg_window exceeds window length");
  if (c.transforms < 3 || c.transforms > 7) fail("transforms (R) must be in [3, 7]");
  if (!(c.noise_ratio >= 0.0 && c.noise_ratio <= 1.0)) fail("noise_ratio must be in [0, 1]");
  if (!(c.noise_inject_sigma >= 0.0)) fail("noise_inject_sigma must be >= 0");
  if (c.anomaly_pct && !(*c.anomaly_pct > 0.0 && *c.anomaly_pct < 100.0)) fail("anomaly_pct must be in (0, 100)");
  if (!c.channel_names.empty() && c.channels != 0 && c.channel_names.size() != c.channels)
    fail("channel_names length differs from channels");
  return plan_shapes(c);
}

// ----------------------------------------------------------------- JSON

inline nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json j;
  j["window"] = c.window;
  j["stride"] = c.stride;
  j["channels"] = c.channels;
  j["channel_names"] = c.channel_names;
  j["normal_classes"] = c.normal_classes;
  j["memory_size"] = c.memory_size;
  j["feature_size"] = c.feature_size;
  j["encoder_channels"] = c.encoder_channels;
  j["decoder_channels"] = c.decoder_channels;
  j["classifier_hidden"] = c.classifier_hidden;
  j["dropout"] = c.dropout;
  j["padding"] = c.padding;
  j["share_decoders"] = c.share_decoders;
  j["bn_momentum"] = c.bn_momentum;
  j["ablation"] = ablation_name(c.ablation);
  j["transforms"] = c.transforms;
  j["lambda1"] = c.lambda1;
  j["lambda2"] = c.lambda2;
  j["lr"] = c.lr;
  j["beta1"] = c.beta1;
  j["beta2"] = c.beta2;
  j["adam_eps"] = c.adam_eps;
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["noise_sigma"] = c.noise_sigma;
  j["permute_segments"] = c.permute_segments;
  j["sg_window"] = c.sg_window;
  j["sg_poly"] = c.sg_poly;
  j["percentile"] = c.percentile;
  j["noise_ratio"] = c.noise_ratio;
  j["noise_inject_sigma"] = c.noise_inject_sigma;
  j["anomaly_pct"] = c.anomaly_pct ? nlohmann::json(*c.anomaly_pct) : nlohmann::json(nullptr);
  j["seed"] = c.seed;
  return j;
}

/// Reads known keys over the defaults; unknown keys are a ConfigError.
inline RunConfig config_from_json(const nlohmann::json& j, RunConfig c = {}) {
  if (!j.is_object()) throw ConfigError("config: expected a JSON object");
  try {
    for (auto it = j.begin(); it != j.end(); ++it) {
      const std::string& k = it.key();
      const auto& v = it.value();
      if (k == "window") c.window = v.get<std::size_t>();
      else if (k == "stride") c.stride = v.get<std::size_t>();
      else if (k == "channels") c.channels = v.get<std::size_t>();
      else if (k == "channel_names") c.channel_names = v.get<std::vector<std::string>>();
      else if (k == "normal_classes") c.normal_classes = v.get<std::vector<int>>();
      else if (k == "memory_size") c.memory_size = v.get<std::size_t>();
      else if (k == "feature_size") c.feature_size = v.get<std::size_t>();
      else if (k == "encoder_channels") c.encoder_channels = v.get<std::size_t>();
      else if (k == "decoder_channels") c.decoder_channels = v.get<std::vector<std::size_t>>();
      else if (k == "classifier_hidden") c.classifier_hidden = v.get<std::size_t>();
      else if (k == "dropout") c.dropout = v.get<double>();
      else if (k == "padding") c.padding = v.get<std::string>();
      else if (k == "share_decoders") c.share_decoders = v.get<bool>();
      else if (k == "bn_momentum") c.bn_momentum = v.get<double>();
      else if (k == "ablation") c.ablation = parse_ablation(v.get<std::string>());
      else if (k == "transforms") c.transforms = v.get<std::size_t>();
      else if (k == "lambda1") c.lambda1 = v.get<double>();
      else if (k == "lambda2") c.lambda2 = v.get<double>();
      else if (k == "lr") c.lr = v.get<double>();
      else if (k == "beta1") c.beta1 = v.get<double>();
      else if (k == "beta2") c.beta2 = v.get<double>();
      else if (k == "adam_eps") c.adam_eps = v.get<double>();
      else if (k == "epochs") c.epochs = v.get<std::size_t>();
      else if (k == "batch_size") c.batch_size = v.get<std::size_t>();
      else if (k == "noise_sigma") c.noise_sigma = v.get<double>();
      else if (k == "permute_segments") c.permute_segments = v.get<std::size_t>();
      else if (k == "sg_window") c.sg_window = v.get<std::size_t>();
      else if (k == "sg_poly") c.sg_poly = v.get<std::size_t>();
      else if (k == "percentile") c.percentile = v.get<double>();
      else if (k == "noise_ratio") c.noise_ratio = v.get<double>();
      else if (k == "noise_inject_sigma") c.noise_inject_sigma = v.get<double>();
      else if (k == "anomaly_pct") c.anomaly_pct = v.is_null() ? std::nullopt : std::optional<double>(v.get<double>());
      else if (k == "seed") c.seed = v.get<std::uint64_t>();
      else if (k == "decoder_plan") continue;  // derived, written for the record only
      else throw ConfigError("config: unknown key '" + k + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return c;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config: " + path + ": " + e.what());
  }
  return config_from_json(j);
}

}  // namespace amsl
