#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "amsl/io/checkpoint.hpp"
#include "amsl/io/corpus.hpp"
#include "amsl/io/synth.hpp"
#include "support.hpp"

using namespace amsl;
using namespace amsl::io;
namespace fs = std::filesystem;

namespace {

std::string temp_path(const std::string& name) { return (fs::path(::testing::TempDir()) / name).string(); }

void write_file(const std::string& path, const std::string& text) { std::ofstream(path) << text; }

std::vector<LabeledSeries> make_series(std::size_t count, std::size_t rows, std::size_t channels, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<LabeledSeries> out;
  for (std::size_t i = 0; i < count; ++i) {
    RealMatrix m(rows, channels);
    for (double& v : m.data()) v = rng.normal();
    out.push_back({m, static_cast<std::int64_t>(10 + i), static_cast<int>(i % 2), SplitTag::unassigned});
  }
  return out;
}

std::string expect_data_error(const std::string& path, const CsvSchema& schema = {}) {
  try {
    load_csv(path, schema);
  } catch (const DataError& e) {
    return e.what();
  }
  ADD_FAILURE() << "no DataError for " << path;
  return {};
}

}  // namespace

// ------------------------------------------------------------------ csv

TEST(Csv, TwoSeriesShapes) {
  const auto path = temp_path("two.csv");
  export_csv(path, make_series(2, 100, 3, 1), default_channel_names(3));
  const auto s = load_csv(path);
  ASSERT_EQ(s.size(), 2u);
  for (const auto& x : s) {
    EXPECT_EQ(x.values.rows(), 100u);
    EXPECT_EQ(x.values.cols(), 3u);
  }
}

TEST(Csv, ExportLoadIdentity) {
  auto series = make_series(3, 17, 2, 2);
  series[1].split = SplitTag::test;
  const auto path = temp_path("roundtrip.csv");
  export_csv(path, series, {"x", "y"});
  const auto back = load_csv(path);
  ASSERT_EQ(back.size(), series.size());
  for (std::size_t i = 0; i < series.size(); ++i) {
    EXPECT_EQ(back[i].values.data(), series[i].values.data());
    EXPECT_EQ(back[i].series_id, series[i].series_id);
    EXPECT_EQ(back[i].class_id, series[i].class_id);
    EXPECT_EQ(back[i].split, series[i].split);
  }
}

TEST(Csv, ChannelOrderFollowsSchema) {
  const auto path = temp_path("order.csv");
  write_file(path, "b,series_id,a\n1,0,2\n3,0,4\n");
  CsvSchema schema;
  schema.channels = {"a", "b"};
  const auto s = load_csv(path, schema);
  ASSERT_EQ(s.size(), 1u);
  EXPECT_EQ(s[0].values.data(), (std::vector<double>{2, 1, 4, 3}));
  EXPECT_EQ(s[0].class_id, kUnlabeled);
}

TEST(Csv, GroupsByIdInAppearanceOrder) {
  const auto path = temp_path("group.csv");
  write_file(path, "series_id,label,v\n7,1,1\n3,0,2\n7,1,3\n");
  const auto s = load_csv(path);
  ASSERT_EQ(s.size(), 2u);
  EXPECT_EQ(s[0].series_id, 7);
  EXPECT_EQ(s[0].values.data(), (std::vector<double>{1, 3}));
  EXPECT_EQ(s[1].series_id, 3);
}

TEST(Csv, ErrorsNameTheLine) {
  const auto nan = temp_path("nan.csv");
  write_file(nan, "series_id,label,a\n0,0,1\n0,0,nan\n");
  EXPECT_NE(expect_data_error(nan).find("line 3"), std::string::npos);

  const auto ragged = temp_path("ragged.csv");
  write_file(ragged, "series_id,label,a,b\n0,0,1,2\n0,0,1\n");
  EXPECT_NE(expect_data_error(ragged).find("line 3"), std::string::npos);

  const auto text = temp_path("text.csv");
  write_file(text, "series_id,label,a\n0,0,abc\n");
  EXPECT_NE(expect_data_error(text).find("line 2"), std::string::npos);

  const auto missing = temp_path("missing.csv");
  write_file(missing, "series_id,label,a\n0,0,\n");
  EXPECT_NE(expect_data_error(missing).find("line 2"), std::string::npos);

  const auto relabel = temp_path("relabel.csv");
  write_file(relabel, "series_id,label,a\n0,0,1\n0,1,1\n");
  EXPECT_NE(expect_data_error(relabel).find("line 3"), std::string::npos);

  const auto extra = temp_path("extra.csv");
  write_file(extra, "series_id,a,b\n0,1,2\n");
  CsvSchema schema;
  schema.channels = {"a"};
  EXPECT_NE(expect_data_error(extra, schema).find("unknown column 'b'"), std::string::npos);

  const auto noid = temp_path("noid.csv");
  write_file(noid, "a,b\n1,2\n");
  expect_data_error(noid);
  expect_data_error(temp_path("does_not_exist.csv"));
}

// ---------------------------------------------------------------- split

TEST(Split, FiveOneFour) {
  const auto normals = make_series(100, 4, 1, 3);
  const auto anomalies = make_series(7, 4, 1, 4);
  const auto s = split(normals, anomalies, 0);
  EXPECT_EQ(s.train.size(), 50u);
  EXPECT_EQ(s.val.size(), 10u);
  EXPECT_EQ(s.test_normal.size(), 40u);
  EXPECT_EQ(s.test_anomaly.size(), 7u);
}

TEST(Split, DisjointAndSeedStable) {
  auto normals = make_series(30, 4, 1, 5);
  for (std::size_t i = 0; i < normals.size(); ++i) normals[i].series_id = static_cast<std::int64_t>(i);
  const auto a = split(normals, {}, 9), b = split(normals, {}, 9), c = split(normals, {}, 10);
  std::set<std::int64_t> seen;
  for (const auto* part : {&a.train, &a.val, &a.test_normal})
    for (const auto& s : *part) EXPECT_TRUE(seen.insert(s.series_id).second);
  EXPECT_EQ(seen.size(), 30u);
  for (std::size_t i = 0; i < a.train.size(); ++i) EXPECT_EQ(a.train[i].series_id, b.train[i].series_id);
  bool differs = false;
  for (std::size_t i = 0; i < a.train.size(); ++i) differs |= a.train[i].series_id != c.train[i].series_id;
  EXPECT_TRUE(differs);
}

TEST(Split, RespectsTagsAndRejectsTrainingAnomalies) {
  auto normals = make_series(4, 4, 1, 6);
  normals[0].split = SplitTag::test;
  const auto s = split(normals, {}, 0);
  EXPECT_EQ(s.test_normal.front().series_id, normals[0].series_id);
  auto bad = make_series(1, 4, 1, 7);
  bad[0].split = SplitTag::train;
  EXPECT_THROW(split(normals, bad, 0), DataError);
  EXPECT_THROW(split({}, bad, 0), DataError);
}

TEST(Split, WindowsNormalizedWithTrainingStatistics) {
  const auto s = split(make_series(10, 20, 2, 8), make_series(2, 20, 2, 9), 1);
  const auto w = window_split(s, 8, 4);
  EXPECT_EQ(w.train.size(), s.train.size() * 4);
  EXPECT_EQ(w.test.count(Label::abnormal), s.test_anomaly.size() * 4);
  double lo = 1e9, hi = -1e9;
  for (const auto& win : w.train)
    for (double v : win.values.data()) lo = std::min(lo, v), hi = std::max(hi, v);
  EXPECT_GE(lo, 0.0);
  EXPECT_LE(hi, 1.0);
  for (const auto& win : w.test.windows)
    for (double v : win.values.data()) {
      EXPECT_GE(v, Normalizer::kClipLow);
      EXPECT_LE(v, Normalizer::kClipHigh);
    }
}

TEST(Split, AnomalyTargetAlgebra) {
  EXPECT_EQ(anomaly_target(40, 10.0), 5u);
  EXPECT_EQ(anomaly_target(95, 5.0), 5u);
  EXPECT_EQ(anomaly_target(70, 30.0), 30u);
  for (std::size_t n : {10u, 37u, 640u})
    for (double pct : {5.0, 15.0, 30.0}) {
      const double exact = static_cast<double>(n) * pct / (100.0 - pct);
      EXPECT_EQ(anomaly_target(n, pct), static_cast<std::size_t>(std::ceil(exact - 1e-9)));
    }
  EXPECT_THROW(anomaly_target(10, 0.0), ConfigError);
}

TEST(Split, SubsampleAnomalies) {
  LabeledWindows t;
  for (int i = 0; i < 40; ++i) t.windows.push_back(Window{RealMatrix(2, 1), i, 0}), t.labels.push_back(Label::normal);
  for (int i = 0; i < 12; ++i) t.windows.push_back(Window{RealMatrix(2, 1), 100 + i, 0}), t.labels.push_back(Label::abnormal);
  const auto s = subsample_anomalies(t, 10.0, 3);
  EXPECT_EQ(s.count(Label::normal), 40u);
  EXPECT_EQ(s.count(Label::abnormal), 5u);
  EXPECT_EQ(subsample_anomalies(t, 10.0, 3).windows[42].source_id, s.windows[42].source_id);
  EXPECT_THROW(subsample_anomalies(t, 50.0, 3), DataError);
}

// ---------------------------------------------------------------- noise

TEST(InjectNoise, CountsAndIdentity) {
  std::vector<Window> ws;
  for (int i = 0; i < 100; ++i) ws.push_back(Window{RealMatrix(4, 2), i, 0});
  const auto same = inject_noise(ws, 0.0, 0.3, 1);
  for (std::size_t i = 0; i < ws.size(); ++i) EXPECT_EQ(same[i].values.data(), ws[i].values.data());

  std::vector<std::size_t> chosen, again;
  const auto noisy = inject_noise(ws, 0.3, 0.3, 1, &chosen);
  inject_noise(ws, 0.3, 0.3, 1, &again);
  EXPECT_EQ(chosen, again);
  std::size_t changed = 0;
  for (std::size_t i = 0; i < ws.size(); ++i) changed += noisy[i].values.data() != ws[i].values.data();
  EXPECT_EQ(changed, 30u);
  EXPECT_EQ(chosen.size(), 30u);
  EXPECT_THROW(inject_noise(ws, 1.5, 0.3, 1), ConfigError);
}

// ---------------------------------------------------------------- synth

TEST(Synth, SizesMatchConfig) {
  SynthConfig c;
  c.normal_classes = 3;
  c.series_per_class = 5;
  c.series_per_anomaly = 2;
  c.anomaly_types = {AnomalyType::burst, AnomalyType::dropout, AnomalyType::freq_shift};
  c.length = 200;
  c.channels = 4;
  const auto s = synth_generate(c);
  EXPECT_EQ(s.normals.size(), 15u);
  EXPECT_EQ(s.anomalies.size(), 6u);
  EXPECT_EQ(s.carriers.size(), 6u);
  for (const auto& x : s.all()) {
    EXPECT_EQ(x.values.rows(), 200u);
    EXPECT_EQ(x.values.cols(), 4u);
  }
  EXPECT_EQ(s.anomalies.back().class_id, 5);
  EXPECT_EQ(s.class_frequency, (std::vector<double>{1.5, 2.5, 3.5}));
}

TEST(Synth, DeskCorpusHasTwoThousandWindows) {
  const auto s = synth_generate({});
  std::size_t windows = 0;
  for (const auto& x : s.all()) windows += sliding_windows(x.values, 64, 32).size();
  EXPECT_EQ(windows, 2000u);
}

TEST(Synth, SeedStable) {
  const auto a = synth_generate({}), b = synth_generate({});
  SynthConfig other;
  other.seed = 1;
  const auto c = synth_generate(other);
  EXPECT_EQ(a.normals[5].values.data(), b.normals[5].values.data());
  EXPECT_EQ(a.anomalies[3].values.data(), b.anomalies[3].values.data());
  EXPECT_NE(a.normals[5].values.data(), c.normals[5].values.data());
}

TEST(Synth, DominantFrequencyPerClass) {
  SynthConfig c;
  c.channels = 1;
  c.series_per_class = 1;
  c.series_per_anomaly = 0;
  c.length = 640;
  c.noise_sd = 0.0;
  const auto s = synth_generate(c);
  for (std::size_t k = 0; k < s.normals.size(); ++k) {
    // Projection onto the class fundamental beats the neighbouring integer-offset frequencies.
    auto power = [&](double f) {
      double re = 0, im = 0;
      for (std::size_t t = 0; t < c.length; ++t) {
        const double w = 2 * std::numbers::pi * f * static_cast<double>(t) / static_cast<double>(c.period);
        re += s.normals[k].values(t, 0) * std::cos(w);
        im += s.normals[k].values(t, 0) * std::sin(w);
      }
      return re * re + im * im;
    };
    const double f = s.class_frequency[k];
    EXPECT_GT(power(f), 10 * power(f + 1));
    EXPECT_GT(power(f), 10 * power(f - 1));
  }
}

TEST(Synth, AnomalyWindowsDifferFromCarriers) {
  SynthConfig c;
  c.anomaly_types = {AnomalyType::burst, AnomalyType::dropout, AnomalyType::freq_shift};
  const auto s = synth_generate(c);
  for (std::size_t i = 0; i < s.anomalies.size(); ++i) {
    const auto a = sliding_windows(s.anomalies[i].values, 64, 32);
    const auto b = sliding_windows(s.carriers[i], 64, 32);
    for (std::size_t w = 0; w < a.size(); ++w)
      EXPECT_GE(differing_fraction(a[w].values, b[w].values, 3 * c.noise_sd), 0.05)
          << "anomaly " << i << " window " << w;
  }
}

// ----------------------------------------------------------- checkpoint

class Checkpoint : public ::testing::Test {
 protected:
  void SetUp() override {
    cfg_ = amsl::testing::tiny_config();
    tm_.model = std::make_unique<AmslModel<float>>(cfg_);
    Rng rng(3);
    for (auto* p : tm_.model->state_tensors())
      for (auto& v : p->value.vec()) v += static_cast<float>(rng.uniform(-0.01, 0.01));
    tm_.normalizer = Normalizer({0.1, -2.0}, {1.7, 3.0});
    tm_.threshold = Threshold{1.2345, 99.0, 77};
    tm_.alpha_history = {{0.5, 0.25}, {0.75, 0.125}};
    path_ = temp_path("model.amsl");
    save_checkpoint(tm_, path_);
    for (int i = 0; i < 10; ++i) {
      RealMatrix v(16, 2);
      for (double& x : v.data()) x = rng.uniform();
      probes_.push_back(Window{v, i, 0});
    }
  }

  std::vector<char> bytes() const {
    std::ifstream in(path_, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
  }
  void write_bytes(const std::vector<char>& b) const {
    std::ofstream(path_, std::ios::binary).write(b.data(), static_cast<std::streamsize>(b.size()));
  }

  RunConfig cfg_;
  TrainedModel tm_;
  std::string path_;
  std::vector<Window> probes_;
};

TEST_F(Checkpoint, RoundTripPreservesEveryBit) {
  const auto back = load_checkpoint(path_);
  auto a = tm_.model->state_tensors(), b = back.model->state_tensors();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i]->name, b[i]->name);
    EXPECT_EQ(std::memcmp(a[i]->value.data(), b[i]->value.data(), a[i]->size() * sizeof(float)), 0) << a[i]->name;
  }
  EXPECT_EQ(back.normalizer.min(), tm_.normalizer.min());
  EXPECT_EQ(back.normalizer.max(), tm_.normalizer.max());
  ASSERT_TRUE(back.threshold);
  EXPECT_EQ(back.threshold->mu, 1.2345);
  EXPECT_EQ(back.threshold->count, 77u);
  EXPECT_EQ(back.alpha_history, tm_.alpha_history);
  EXPECT_EQ(to_json(back.config()), to_json(tm_.config()));
}

TEST_F(Checkpoint, EvalIdenticalAfterRoundTrip) {
  const auto back = load_checkpoint(path_);
  EXPECT_EQ(reconstruction_errors(*tm_.model, probes_), reconstruction_errors(*back.model, probes_));
}

TEST_F(Checkpoint, StartsWithMagic) {
  const auto b = bytes();
  ASSERT_GE(b.size(), 8u);
  EXPECT_EQ(std::string(b.begin(), b.begin() + 4), "AMSL");
  EXPECT_EQ(b[4], static_cast<char>(kCheckpointVersion));
}

TEST_F(Checkpoint, TruncationRejected) {
  auto b = bytes();
  b.resize(b.size() / 2);
  write_bytes(b);
  EXPECT_THROW(load_checkpoint(path_), DataError);
}

TEST_F(Checkpoint, CorruptionRejected) {
  auto b = bytes();
  b[b.size() / 2] ^= 0x10;
  write_bytes(b);
  try {
    load_checkpoint(path_);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("checksum"), std::string::npos);
  }
}

TEST_F(Checkpoint, VersionMismatchRejected) {
  auto b = bytes();
  b[4] = 9;
  // Re-seal so only the version differs.
  const auto crc = detail::crc32_of(reinterpret_cast<const std::uint8_t*>(b.data()), b.size() - 4);
  for (int i = 0; i < 4; ++i) b[b.size() - 4 + i] = static_cast<char>((crc >> (8 * i)) & 0xFF);
  write_bytes(b);
  try {
    load_checkpoint(path_);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("version"), std::string::npos);
  }
}

TEST_F(Checkpoint, BadMagicAndMissingFile) {
  write_bytes({'N', 'O', 'P', 'E', 0, 0, 0, 0});
  EXPECT_THROW(load_checkpoint(path_), DataError);
  EXPECT_THROW(load_checkpoint(temp_path("absent.amsl")), DataError);
}
