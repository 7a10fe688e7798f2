#pragma once

// Binary checkpoint, little-endian throughout:
//   "AMSL" | u32 format_version | u32 meta_len | meta JSON | u64 seed
//   | u8 has_threshold | f64 mu | f64 percentile | u64 count
//   | u32 tensor_count | { u32 name_len | name | u32 rank | u32 dims[rank] | f32 data[] }*
//   | u32 crc32 of every preceding byte
// The meta JSON holds the config snapshot, the derived decoder plan, the
// normalizer statistics (as doubles) and the per-epoch fusion weights.

#include <bit>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <zlib.h>

#include <json.hpp>

#include "amsl/detect/detect.hpp"
#include "amsl/error.hpp"
#include "amsl/model/model.hpp"
#include "amsl/signal/normalize.hpp"

namespace amsl::io {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Everything detection needs, independent of the original config file.
struct TrainedModel {
  std::unique_ptr<AmslModel<float>> model;
  Normalizer normalizer;
  std::optional<Threshold> threshold;
  std::vector<std::vector<double>> alpha_history;

  const RunConfig& config() const { return model->config(); }
};

namespace detail {

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const std::uint8_t*>(p);
    buf.insert(buf.end(), c, c + n);
  }
  template <class U>
  void le(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) buf.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { le(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { le(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    le(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  std::vector<std::uint8_t> buf;
};

class Reader {
 public:
  Reader(const std::uint8_t* p, std::size_t n) : p_(p), n_(n) {}
  void need(std::size_t k) const {
    if (pos_ + k > n_) throw DataError("checkpoint: truncated or malformed payload");
  }
  template <class U>
  U le() {
    need(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<U>(p_[pos_ + i]) << (8 * i));
    pos_ += sizeof(U);
    return v;
  }
  float f32() { return std::bit_cast<float>(le<std::uint32_t>()); }
  double f64() { return std::bit_cast<double>(le<std::uint64_t>()); }
  std::string str() {
    const auto len = le<std::uint32_t>();
    need(len);
    std::string s(reinterpret_cast<const char*>(p_ + pos_), len);
    pos_ += len;
    return s;
  }
  bool done() const { return pos_ == n_; }

 private:
  const std::uint8_t* p_;
  std::size_t n_;
  std::size_t pos_ = 0;
};

inline std::uint32_t crc32_of(const std::uint8_t* p, std::size_t n) {
  uLong c = crc32(0L, Z_NULL, 0);
  while (n > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    c = crc32(c, p, chunk);
    p += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(c);
}

inline nlohmann::json plan_json(const ShapePlan& p) {
  nlohmann::json stages = nlohmann::json::array();
  for (const auto& s : p.decoder) stages.push_back({s.channels, s.stride, s.out.h, s.out.w});
  return {{"code", {p.code.h, p.code.w, p.code_channels}}, {"decoder", stages}};
}

}  // namespace detail

/// Writes atomically via a temporary file in the same directory.
inline void save_checkpoint(TrainedModel& tm, const std::string& path) {
  if (!tm.model) throw ContractError("save_checkpoint: no model");
  const RunConfig& cfg = tm.model->config();
  nlohmann::json meta;
  meta["config"] = to_json(cfg);
  meta["decoder_plan"] = detail::plan_json(tm.model->plan());
  meta["normalizer"] = {{"min", tm.normalizer.min()}, {"max", tm.normalizer.max()}};
  meta["alpha_history"] = tm.alpha_history;

  detail::Writer w;
  w.bytes("AMSL", 4);
  w.le(kCheckpointVersion);
  w.str(meta.dump());
  w.le(static_cast<std::uint64_t>(cfg.seed));
  w.le(static_cast<std::uint8_t>(tm.threshold ? 1 : 0));
  w.f64(tm.threshold ? tm.threshold->mu : 0.0);
  w.f64(tm.threshold ? tm.threshold->percentile : 0.0);
  w.le(static_cast<std::uint64_t>(tm.threshold ? tm.threshold->count : 0));
  const auto tensors = tm.model->state_tensors();
  w.le(static_cast<std::uint32_t>(tensors.size()));
  for (const auto* p : tensors) {
    w.str(p->name);
    w.le(static_cast<std::uint32_t>(p->value.rank()));
    for (auto d : p->value.shape()) w.le(static_cast<std::uint32_t>(d));
    for (float v : p->value.vec()) w.f32(v);
  }
  w.le(detail::crc32_of(w.buf.data(), w.buf.size()));

  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write checkpoint '" + tmp + "'");
    out.write(reinterpret_cast<const char*>(w.buf.data()), static_cast<std::streamsize>(w.buf.size()));
    if (!out) throw DataError("write failed for '" + tmp + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw DataError("cannot move checkpoint into place at '" + path + "': " + ec.message());
}

/// Validates magic, version and checksum before building anything.
inline TrainedModel load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint '" + path + "'");
  const std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (buf.size() < 12 || std::string(buf.begin(), buf.begin() + 4) != "AMSL")
    throw DataError("checkpoint '" + path + "': not an AMSL checkpoint");
  const std::size_t body = buf.size() - 4;
  detail::Reader tail(buf.data() + body, 4);
  if (tail.le<std::uint32_t>() != detail::crc32_of(buf.data(), body))
    throw DataError("checkpoint '" + path + "': checksum mismatch (file truncated or corrupted)");

  detail::Reader r(buf.data() + 4, body - 4);
  const auto version = r.le<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw DataError("checkpoint '" + path + "': format version " + std::to_string(version) + ", expected " +
                    std::to_string(kCheckpointVersion));
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(r.str());
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint meta: ") + e.what());
  }
  TrainedModel tm;
  RunConfig cfg = config_from_json(meta.at("config"));
  cfg.seed = r.le<std::uint64_t>();
  const bool has_threshold = r.le<std::uint8_t>() != 0;
  Threshold t;
  t.mu = r.f64();
  t.percentile = r.f64();
  t.count = r.le<std::uint64_t>();
  if (has_threshold) tm.threshold = t;
  try {
    tm.normalizer = Normalizer(meta.at("normalizer").at("min").get<std::vector<double>>(),
                               meta.at("normalizer").at("max").get<std::vector<double>>());
    tm.alpha_history = meta.at("alpha_history").get<std::vector<std::vector<double>>>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint meta: ") + e.what());
  }

  auto model = std::make_unique<AmslModel<float>>(cfg);
  auto tensors = model->state_tensors();
  const auto count = r.le<std::uint32_t>();
  if (count != tensors.size())
    throw DataError("checkpoint: " + std::to_string(count) + " tensors, model expects " +
                    std::to_string(tensors.size()));
  std::vector<char> seen(tensors.size(), 0);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = r.str();
    std::size_t k = 0;
    while (k < tensors.size() && tensors[k]->name != name) ++k;
    if (k == tensors.size() || seen[k]) throw DataError("checkpoint: unexpected tensor '" + name + "'");
    seen[k] = 1;
    const auto rank = r.le<std::uint32_t>();
    nn::Shape shape(rank);
    for (auto& d : shape) d = r.le<std::uint32_t>();
    if (shape != tensors[k]->value.shape())
      throw DataError("checkpoint: tensor '" + name + "' has shape " + nn::shape_str(shape) + ", model expects " +
                      nn::shape_str(tensors[k]->value.shape()));
    for (auto& v : tensors[k]->value.vec()) v = r.f32();
    ++tensors[k]->version;
  }
  if (!r.done()) throw DataError("checkpoint: trailing bytes after tensors");
  tm.model = std::move(model);
  return tm;
}

}  // namespace amsl::io
