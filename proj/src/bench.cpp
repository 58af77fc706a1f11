#include "aped/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "aped/error.hpp"

namespace aped {

const char* to_string(BenchMode m) {
  return m == BenchMode::conditioned ? "conditioned" : "asr_autoregressive";
}

BenchMode parse_bench_mode(std::string_view text) {
  if (text == "conditioned") return BenchMode::conditioned;
  if (text == "asr_autoregressive" || text == "autoregressive" || text == "asr") return BenchMode::asr_autoregressive;
  throw Error("unknown bench mode '" + std::string(text) + "' (expected conditioned or asr_autoregressive)");
}

void BenchConfig::validate() const {
  if (batch_size < 1) throw Error("bench: batch size must be >= 1");
  if (repetitions < 10) throw Error("bench: repetitions must be >= 10");
  if (warmup < 1) throw Error("bench: warmup runs must be >= 1");
}

namespace {

using Clock = std::chrono::steady_clock;

// Runs one sentence; returns decoder passes and the emitted length.
std::pair<long, int> infer_one(const Model& model, const Example& ex, BenchMode mode) {
  PassCounter counter;
  if (mode == BenchMode::conditioned) {
    const auto probs = model.predict_error_probs(ex.features, ex.target, &counter);
    (void)probs;
    return {counter.decoder_passes, 0};
  }
  PhonemeSequence recognized;
  const auto states = model.baseline_aped(ex.features, ex.target, {}, 2 * ex.target.size(), &counter, &recognized);
  (void)states;
  return {counter.decoder_passes, recognized.size()};
}

}  // namespace

BenchReport run_bench(const Model& model, const std::vector<Example>& examples, const BenchConfig& cfg) {
  cfg.validate();
  if (examples.empty()) throw Error("bench: split '" + cfg.split + "' is empty");

  BenchReport rep;
  rep.mode = cfg.mode;
  rep.batch_size = cfg.batch_size;
  rep.split = cfg.split;
  rep.model = model.config();
  rep.sentences = static_cast<int>(examples.size());
  rep.threads = 1;

  for (int w = 0; w < cfg.warmup; ++w) {
    for (const auto& ex : examples) infer_one(model, ex, cfg.mode);
  }

  const std::size_t b = static_cast<std::size_t>(cfg.batch_size);
  std::vector<double> samples;
  for (int r = 0; r < cfg.repetitions; ++r) {
    for (std::size_t g = 0; g < examples.size(); g += b) {
      const std::size_t end = std::min(examples.size(), g + b);
      const auto start = Clock::now();
      for (std::size_t i = g; i < end; ++i) {
        const auto [passes, emitted] = infer_one(model, examples[i], cfg.mode);
        if (r == 0) {
          rep.passes.push_back(passes);
          rep.emitted.push_back(emitted);
        }
      }
      const double ms = std::chrono::duration<double, std::milli>(Clock::now() - start).count();
      samples.push_back(ms / static_cast<double>(end - g));
    }
  }

  const double n = static_cast<double>(samples.size());
  rep.mean_ms = std::accumulate(samples.begin(), samples.end(), 0.0) / n;
  double ss = 0.0;
  for (double s : samples) ss += (s - rep.mean_ms) * (s - rep.mean_ms);
  rep.std_ms = samples.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
  std::sort(samples.begin(), samples.end());
  const std::size_t mid = samples.size() / 2;
  rep.median_ms = samples.size() % 2 ? samples[mid] : 0.5 * (samples[mid - 1] + samples[mid]);
  rep.passes_mean = static_cast<double>(std::accumulate(rep.passes.begin(), rep.passes.end(), 0L)) /
                    static_cast<double>(rep.passes.size());
  return rep;
}

SpeedupRow compare(const BenchReport& baseline, const BenchReport& report) {
  if (baseline.split != report.split) throw Error("bench compare: different splits");
  if (baseline.batch_size != report.batch_size) throw Error("bench compare: different batch sizes");
  if (baseline.sentences != report.sentences) throw Error("bench compare: different sentence counts");
  if (!(baseline.model == report.model)) throw Error("bench compare: different model dimensions");
  if (!(report.mean_ms > 0.0) || !(report.median_ms > 0.0)) throw Error("bench compare: non-positive timing");
  return {baseline.mean_ms / report.mean_ms, baseline.median_ms / report.median_ms};
}

void attach_speedup(const BenchReport& baseline, BenchReport& report) {
  report.speedup = compare(baseline, report).mean_ratio;
}

std::string bench_csv(const std::vector<BenchReport>& reports) {
  std::ostringstream out;
  out << "mode,batch,mean_ms,std_ms,median_ms,passes_mean,speedup\n";
  char buf[256];
  for (const auto& r : reports) {
    std::snprintf(buf, sizeof buf, "%s,%d,%.4f,%.4f,%.4f,%.3f,%.3f\n", to_string(r.mode), r.batch_size, r.mean_ms,
                  r.std_ms, r.median_ms, r.passes_mean, r.speedup);
    out << buf;
  }
  return out.str();
}

}  // namespace aped
