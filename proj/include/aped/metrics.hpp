#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace aped {

inline constexpr double kDefaultTheta = 0.5;

/// Outcome counts: TA/FR over correctly pronounced positions, FA/TR over
/// mispronounced ones. A "rejection" is a predicted error state of 1.
struct ConfusionCounts {
  std::int64_t ta = 0;
  std::int64_t fr = 0;
  std::int64_t fa = 0;
  std::int64_t tr = 0;

  std::int64_t total() const { return ta + fr + fa + tr; }
  ConfusionCounts& operator+=(const ConfusionCounts& o);
  bool operator==(const ConfusionCounts&) const = default;
};

ConfusionCounts operator+(ConfusionCounts a, const ConfusionCounts& b);

struct MetricsReport {
  double theta = kDefaultTheta;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double accuracy = 0.0;
  double far = 0.0;
  double frr = 0.0;
  ConfusionCounts counts;
  /// Set when any ratio had a zero denominator (its value is reported as 0).
  bool degenerate = false;
};

/// 1 where p >= theta. theta must lie strictly inside (0, 1).
std::vector<int> binarize(std::span<const double> probs, double theta = kDefaultTheta);

ConfusionCounts confusion(std::span<const int> predicted, std::span<const int> truth);

/// precision = TR/(TR+FR), recall = TR/(TR+FA), F1 = 2PR/(P+R),
/// accuracy = (TA+TR)/k, FAR = FA/(FA+TR), FRR = FR/(TA+FR).
MetricsReport report(const ConfusionCounts& counts, double theta = kDefaultTheta);

/// Soft predictions and ground truth for one utterance (both length k).
struct UtterancePrediction {
  std::vector<double> probs;
  std::vector<int> states;
};

/// One report per theta over counts pooled across every utterance.
std::vector<MetricsReport> theta_sweep(std::span<const UtterancePrediction> dataset, std::span<const double> thetas);

/// 0.1, 0.2, ..., 0.9.
std::vector<double> default_theta_grid();

/// "lo:hi:step" (inclusive), rounded to 10 decimals.
std::vector<double> parse_theta_grid(std::string_view spec);

/// Header theta,precision,recall,f1,accuracy,far,frr,ta,fr,fa,tr and one row
/// per report.
std::string sweep_csv(std::span<const MetricsReport> reports);

/// Minimal SVG with the recall-precision and FAR-FRR curves side by side.
std::string sweep_svg(std::span<const MetricsReport> reports);

}  // namespace aped
