#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "aped/model.hpp"
#include "aped/training.hpp"

namespace aped {

enum class BenchMode { asr_autoregressive, conditioned };

const char* to_string(BenchMode m);
BenchMode parse_bench_mode(std::string_view text);

struct BenchConfig {
  BenchMode mode = BenchMode::conditioned;
  int batch_size = 1;
  int repetitions = 10;  // timed passes over the split, >= 10
  int warmup = 1;        // untimed passes over the split, >= 1
  std::string split = "test";

  void validate() const;
};

struct BenchReport {
  BenchMode mode = BenchMode::conditioned;
  int batch_size = 1;
  std::string split;
  ModelConfig model;
  int sentences = 0;
  double mean_ms = 0.0;    // per sentence
  double std_ms = 0.0;
  double median_ms = 0.0;
  double passes_mean = 0.0;             // decoder passes per sentence
  std::vector<long> passes;             // per sentence, first repetition
  std::vector<int> emitted;             // recognised length per sentence (autoregressive only)
  double speedup = 1.0;                 // baseline mean / this mean
  int threads = 1;
};

/// Times inference per sentence over `examples`. Features are already
/// stacked; each sample covers encoder and decoder passes for one group of
/// batch_size sentences divided by the group size. Autoregressive decoding
/// stops at EOS or 2 x target length.
BenchReport run_bench(const Model& model, const std::vector<Example>& examples, const BenchConfig& cfg);

struct SpeedupRow {
  double mean_ratio = 1.0;    // baseline.mean / report.mean
  double median_ratio = 1.0;
};

/// Throws when split, batch size, sentence count or model dims differ.
SpeedupRow compare(const BenchReport& baseline, const BenchReport& report);

/// Sets report.speedup from compare(baseline, report).
void attach_speedup(const BenchReport& baseline, BenchReport& report);

/// mode,batch,mean_ms,std_ms,median_ms,passes_mean,speedup
std::string bench_csv(const std::vector<BenchReport>& reports);

}  // namespace aped
