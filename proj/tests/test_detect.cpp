#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "amsl/detect/detect.hpp"
#include "support.hpp"

using namespace amsl;

namespace {

// Closest-ranks interpolation on 1-based ranks: rank = 1 + p/100 (n - 1).
double rank_oracle(std::vector<double> v, double p) {
  std::sort(v.begin(), v.end());
  const double rank = 1.0 + p / 100.0 * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(rank));
  const double frac = rank - static_cast<double>(lo);
  if (lo >= v.size()) return v.back();
  return v[lo - 1] + frac * (v[lo] - v[lo - 1]);
}

std::vector<Label> labels_from(const std::string& s) {
  std::vector<Label> out;
  for (char c : s) out.push_back(c == 'a' ? Label::abnormal : Label::normal);
  return out;
}

}  // namespace

TEST(Calibrate, OneToHundredAtNinetyNine) {
  std::vector<double> e(100);
  for (std::size_t i = 0; i < 100; ++i) e[i] = static_cast<double>(i + 1);
  const auto t = calibrate(e, 99.0);
  EXPECT_NEAR(t.mu, rank_oracle(e, 99.0), 1e-12);
  EXPECT_NEAR(t.mu, 99.01, 1e-12);
  EXPECT_EQ(t.count, 100u);
  EXPECT_EQ(t.percentile, 99.0);
}

TEST(Calibrate, SingleElementAndMax) {
  EXPECT_EQ(calibrate({3.5}, 42.0).mu, 3.5);
  EXPECT_EQ(calibrate({4, 1, 9, 2}, 100.0).mu, 9.0);
}

TEST(Calibrate, AgreesWithRankOracle) {
  Rng rng(1);
  for (int k = 0; k < 200; ++k) {
    std::vector<double> e(1 + rng.below(60));
    for (auto& v : e) v = rng.uniform(0, 10);
    const double p = rng.uniform(1, 100);
    EXPECT_NEAR(calibrate(e, p).mu, rank_oracle(e, p), 1e-12);
  }
}

TEST(Calibrate, Errors) {
  EXPECT_THROW(calibrate({}, 99), DataError);
  EXPECT_THROW(calibrate({1.0, NAN}, 99), NumericError);
  EXPECT_THROW(calibrate({1.0}, 0.0), ConfigError);
  EXPECT_THROW(calibrate({1.0}, 100.5), ConfigError);
}

TEST(Calibrate, NewMaxNeverLowersMu) {
  Rng rng(2);
  for (int k = 0; k < 200; ++k) {
    std::vector<double> e(2 + rng.below(50));
    for (auto& v : e) v = rng.uniform(0, 5);
    const double before = calibrate(e, 95).mu;
    e.push_back(*std::max_element(e.begin(), e.end()) + rng.uniform(0, 1));
    EXPECT_GE(calibrate(e, 95).mu, before);
  }
}

TEST(Predict, Boundaries) {
  const Threshold t{2.5, 99, 10};
  EXPECT_EQ(predict(2.5, t), Label::normal);
  EXPECT_EQ(predict(std::nextafter(2.5, 3.0), t), Label::abnormal);
  EXPECT_EQ(predict(0.0, t), Label::normal);
  EXPECT_EQ(predict(0.0, Threshold{0.0, 99, 1}), Label::normal);
}

TEST(Predict, MonotoneInErrorAndPercentile) {
  Rng rng(3);
  std::vector<double> errs(300);
  for (auto& v : errs) v = rng.uniform(0, 10);
  std::size_t prev = errs.size() + 1;
  for (double p : {50.0, 80.0, 90.0, 95.0, 99.0, 100.0}) {
    const auto pred = predict_all(errs, calibrate(errs, p));
    const auto abnormal = static_cast<std::size_t>(std::count(pred.begin(), pred.end(), Label::abnormal));
    EXPECT_LE(abnormal, prev);
    prev = abnormal;
  }
  const Threshold t{5, 99, 1};
  Label last = Label::normal;
  for (double e = 0; e < 10; e += 0.01) {
    const Label l = predict(e, t);
    if (last == Label::abnormal) {
      EXPECT_EQ(l, Label::abnormal);
    }
    last = l;
  }
}

TEST(Evaluate, Perfect) {
  const auto truth = labels_from("nnnaana");
  const auto m = evaluate(truth, truth);
  for (double v : {m.m_pre, m.m_rec, m.m_f1, m.acc}) EXPECT_EQ(v, 1.0);
  EXPECT_TRUE(m.warnings.empty());
}

TEST(Evaluate, SymmetricConfusion) {
  // 9 TP, 1 FN, 1 FP, 9 TN per class.
  const auto truth = labels_from(std::string(10, 'a') + std::string(10, 'n'));
  const auto pred = labels_from(std::string(9, 'a') + "n" + "a" + std::string(9, 'n'));
  const auto m = evaluate(pred, truth);
  for (double v : {m.m_pre, m.m_rec, m.m_f1, m.acc}) EXPECT_NEAR(v, 0.9, 1e-15);
  EXPECT_EQ(m.abnormal.support, 10u);
}

TEST(Evaluate, MatchesConfusionOracle) {
  Rng rng(4);
  for (int k = 0; k < 100; ++k) {
    std::vector<Label> pred(50), truth(50);
    for (std::size_t i = 0; i < 50; ++i) {
      pred[i] = rng.uniform() < 0.3 ? Label::abnormal : Label::normal;
      truth[i] = i < 2 ? Label(i) : (rng.uniform() < 0.3 ? Label::abnormal : Label::normal);
    }
    double tp = 0, fp = 0, fn = 0, tn = 0;
    for (std::size_t i = 0; i < 50; ++i) {
      const bool p = pred[i] == Label::abnormal, t = truth[i] == Label::abnormal;
      tp += p && t;
      fp += p && !t;
      fn += !p && t;
      tn += !p && !t;
    }
    auto f1 = [](double pr, double rc) { return pr + rc > 0 ? 2 * pr * rc / (pr + rc) : 0.0; };
    const double pa = tp + fp > 0 ? tp / (tp + fp) : 0, ra = tp / (tp + fn);
    const double pn = tn + fn > 0 ? tn / (tn + fn) : 0, rn = tn / (tn + fp);
    const auto m = evaluate(pred, truth);
    EXPECT_NEAR(m.m_pre, (pa + pn) / 2, 1e-12);
    EXPECT_NEAR(m.m_rec, (ra + rn) / 2, 1e-12);
    EXPECT_NEAR(m.m_f1, (f1(pa, ra) + f1(pn, rn)) / 2, 1e-12);
    EXPECT_NEAR(m.acc, (tp + tn) / 50, 1e-12);
    for (double v : {m.m_pre, m.m_rec, m.m_f1, m.acc}) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
}

TEST(Evaluate, ZeroDivisionWarns) {
  const auto truth = labels_from("nnnn");
  const auto m = evaluate(truth, truth);
  EXPECT_EQ(m.abnormal.precision, 0.0);
  EXPECT_EQ(m.abnormal.f1, 0.0);
  EXPECT_FALSE(m.warnings.empty());
  EXPECT_THROW(evaluate(labels_from("n"), labels_from("nn")), DataError);
}

TEST(Metrics, ReferenceRowRoundTrip) {
  Metrics m;
  m.m_pre = 0.9788;
  m.m_rec = 0.9713;
  m.m_f1 = 0.9750;
  m.acc = 0.9770;
  const auto j = to_json(m);
  EXPECT_EQ(j.at("mPre").get<double>(), 0.9788);
  const auto back = metrics_from_json(nlohmann::json::parse(j.dump()));
  EXPECT_EQ(back.m_pre, 0.9788);
  EXPECT_EQ(back.m_rec, 0.9713);
  EXPECT_EQ(back.m_f1, 0.9750);
  EXPECT_EQ(back.acc, 0.9770);
  std::ostringstream s;
  s << std::fixed << std::setprecision(4) << back.m_pre << ' ' << back.m_rec << ' ' << back.m_f1 << ' ' << back.acc;
  EXPECT_EQ(s.str(), "0.9788 0.9713 0.9750 0.9770");
}

TEST(Report, CsvAndSummary) {
  const auto r = DetectionReport::make({0.5, 3.0, 1.0}, Threshold{1.0, 99, 3}, labels_from("nan"));
  EXPECT_EQ(r.labels_pred, labels_from("nan"));
  ASSERT_TRUE(r.metrics);
  EXPECT_EQ(r.metrics->acc, 1.0);
  const auto path = (std::filesystem::path(::testing::TempDir()) / "report.csv").string();
  r.write_csv(path);
  std::ifstream in(path);
  std::string header, row;
  std::getline(in, header);
  std::getline(in, row);
  EXPECT_EQ(header, "window_id,error,pred,truth");
  EXPECT_EQ(row, "0,0.5,normal,normal");
  const auto j = r.summary();
  EXPECT_EQ(j.at("predicted_abnormal").get<int>(), 1);
  EXPECT_TRUE(j.contains("metrics"));

  const auto unlabeled = DetectionReport::make({0.5, 3.0}, Threshold{1.0, 99, 3});
  EXPECT_FALSE(unlabeled.metrics);
  EXPECT_FALSE(unlabeled.summary().contains("metrics"));
}

TEST(Scoring, ThreadsFromEnvironment) {
  ::setenv("AMSL_THREADS", "3", 1);
  EXPECT_EQ(scoring_threads(8), 3u);
  EXPECT_EQ(scoring_threads(2), 2u);
  ::setenv("AMSL_THREADS", "zero", 1);
  EXPECT_THROW(scoring_threads(8), ConfigError);
  ::unsetenv("AMSL_THREADS");
  EXPECT_GE(scoring_threads(8), 1u);
}

TEST(Scoring, OrderStableAcrossThreadCounts) {
  RunConfig c = amsl::testing::tiny_config();
  AmslModel<float> m(c);
  Rng rng(5);
  std::vector<Window> ws;
  for (int i = 0; i < 37; ++i) {
    RealMatrix v(16, 2);
    for (double& x : v.data()) x = rng.uniform();
    ws.push_back(Window{v, i, 0});
  }
  ::setenv("AMSL_THREADS", "1", 1);
  const auto one = reconstruction_errors(m, ws, 8);
  ::setenv("AMSL_THREADS", "4", 1);
  const auto four = reconstruction_errors(m, ws, 8);
  ::unsetenv("AMSL_THREADS");
  EXPECT_EQ(one, four);
  EXPECT_NEAR(reconstruction_error(m, ws[12]), one[12], 1e-5 * one[12]);
  EXPECT_EQ(reconstruction_error(m, ws[12]), reconstruction_error(m, ws[12]));
}

TEST(Scoring, SumsSquaredErrorOverVariants) {
  RunConfig c = amsl::testing::tiny_config();
  AmslModel<double> m(c);
  Rng rng(6);
  RealMatrix v(16, 2);
  for (double& x : v.data()) x = rng.uniform();
  const Window w{v, 0, 0};
  const auto x = assemble_batch<double>({w}, {0}, c);
  const auto s = m.forward(x, 1, Mode::eval);
  double oracle = 0;
  for (std::size_t i = 0; i < x.size(); ++i) oracle += (s.recon[i] - x[i]) * (s.recon[i] - x[i]);
  EXPECT_NEAR(s.window_error[0], oracle, 1e-9);
}

TEST(Scoring, SpikeRaisesErrorOnTrainedModel) {
  io::SynthConfig sc;
  sc.series_per_class = 4;
  sc.series_per_anomaly = 1;
  const auto corpus = amsl::testing::synthetic_corpus(sc);
  RunConfig c = amsl::testing::desk_config();
  c.memory_size = 16;
  c.feature_size = 8;
  c.epochs = 3;
  c = bind_channels(c, corpus.channels());
  const auto data = prepare(c, corpus);
  const auto tm = train_model(c, data);
  for (std::size_t i = 0; i < data.test.windows.size(); i += 7) {
    Window spiked = data.test.windows[i];
    for (std::size_t ch = 0; ch < spiked.channels(); ++ch) spiked.values(20, ch) += 5.0;
    EXPECT_GT(reconstruction_error(*tm.model, spiked), reconstruction_error(*tm.model, data.test.windows[i]));
  }
}
