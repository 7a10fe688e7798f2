// Synthetic corpus -> train -> calibrate -> evaluate, in one process.
//   quickstart [epochs]

#include <cstdlib>
#include <iostream>

#include "amsl/io/synth.hpp"
#include "amsl/pipeline.hpp"

int main(int argc, char** argv) {
  const auto synth = amsl::io::synth_generate({});
  const amsl::Corpus corpus{synth.normals, synth.anomalies};

  amsl::RunConfig cfg;
  cfg.window = 64;
  cfg.stride = 32;
  cfg.memory_size = 64;
  cfg.feature_size = 32;
  cfg.epochs = argc > 1 ? static_cast<std::size_t>(std::atoi(argv[1])) : 20;

  amsl::FitOptions opts;
  opts.on_epoch = [](const amsl::EpochRecord& e) {
    std::cout << "epoch " << e.epoch << "  train " << e.total << "  val " << e.val_total << '\n';
  };
  try {
    const auto run = amsl::run_experiment(cfg, corpus, opts);
    const auto& m = *run.report.metrics;
    std::cout << "threshold " << run.report.threshold.mu << "\n"
              << "mPre " << m.m_pre << "  mRec " << m.m_rec << "  mF1 " << m.m_f1 << "  Acc " << m.acc << '\n';
  } catch (const amsl::Error& e) {
    std::cerr << e.what() << '\n';
    return amsl::exit_code_for(e.kind());
  }
  return 0;
}
