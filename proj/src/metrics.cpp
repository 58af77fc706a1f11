#include "aped/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "aped/error.hpp"

namespace aped {

ConfusionCounts& ConfusionCounts::operator+=(const ConfusionCounts& o) {
  ta += o.ta;
  fr += o.fr;
  fa += o.fa;
  tr += o.tr;
  return *this;
}

ConfusionCounts operator+(ConfusionCounts a, const ConfusionCounts& b) { return a += b; }

std::vector<int> binarize(std::span<const double> probs, double theta) {
  if (!(theta > 0.0 && theta < 1.0)) throw Error("theta must lie in (0, 1)");
  std::vector<int> out(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) out[i] = probs[i] >= theta ? 1 : 0;
  return out;
}

ConfusionCounts confusion(std::span<const int> predicted, std::span<const int> truth) {
  if (predicted.size() != truth.size()) {
    throw Error("confusion: prediction length " + std::to_string(predicted.size()) + " differs from label length " +
                std::to_string(truth.size()));
  }
  ConfusionCounts c;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const int p = predicted[i], e = truth[i];
    if ((p != 0 && p != 1) || (e != 0 && e != 1)) throw Error("confusion: decisions and labels must be 0 or 1");
    c.tr += p * e;
    c.fr += p * (1 - e);
    c.fa += (1 - p) * e;
    c.ta += (1 - p) * (1 - e);
  }
  return c;
}

MetricsReport report(const ConfusionCounts& counts, double theta) {
  MetricsReport r;
  r.theta = theta;
  r.counts = counts;
  auto ratio = [&](std::int64_t num, std::int64_t den) {
    if (den == 0) {
      r.degenerate = true;
      return 0.0;
    }
    return static_cast<double>(num) / static_cast<double>(den);
  };
  r.precision = ratio(counts.tr, counts.tr + counts.fr);
  r.recall = ratio(counts.tr, counts.tr + counts.fa);
  r.accuracy = ratio(counts.ta + counts.tr, counts.total());
  r.far = ratio(counts.fa, counts.fa + counts.tr);
  r.frr = ratio(counts.fr, counts.ta + counts.fr);
  if (r.precision + r.recall > 0.0) {
    r.f1 = 2.0 * r.precision * r.recall / (r.precision + r.recall);
  } else {
    r.f1 = 0.0;
    r.degenerate = true;
  }
  return r;
}

std::vector<MetricsReport> theta_sweep(std::span<const UtterancePrediction> dataset, std::span<const double> thetas) {
  if (dataset.empty()) throw Error("theta_sweep: empty dataset");
  for (std::size_t i = 0; i < thetas.size(); ++i) {
    if (!(thetas[i] > 0.0 && thetas[i] < 1.0)) throw Error("theta_sweep: every theta must lie in (0, 1)");
    if (i > 0 && !(thetas[i] > thetas[i - 1])) throw Error("theta_sweep: thetas must be strictly increasing");
  }
  std::vector<MetricsReport> out;
  out.reserve(thetas.size());
  for (double theta : thetas) {
    ConfusionCounts pooled;
    for (const auto& u : dataset) pooled += confusion(binarize(u.probs, theta), u.states);
    out.push_back(report(pooled, theta));
  }
  return out;
}

std::vector<double> default_theta_grid() { return parse_theta_grid("0.1:0.9:0.1"); }

std::vector<double> parse_theta_grid(std::string_view spec) {
  double lo = 0, hi = 0, step = 0;
  const std::string s(spec);
  char tail = 0;
  if (std::sscanf(s.c_str(), "%lf:%lf:%lf%c", &lo, &hi, &step, &tail) != 3) {
    throw Error("theta grid must look like lo:hi:step, got '" + s + "'");
  }
  if (!(step > 0.0) || hi < lo) throw Error("theta grid needs step > 0 and hi >= lo");
  if (!(lo > 0.0) || !(hi < 1.0)) throw Error("theta grid must lie inside (0, 1)");
  std::vector<double> out;
  const long n = std::lround(std::floor((hi - lo) / step + 1e-9));
  for (long i = 0; i <= n; ++i) {
    const double t = std::round((lo + static_cast<double>(i) * step) * 1e10) / 1e10;
    out.push_back(t);
  }
  return out;
}

std::string sweep_csv(std::span<const MetricsReport> reports) {
  std::ostringstream out;
  out << "theta,precision,recall,f1,accuracy,far,frr,ta,fr,fa,tr\n";
  char buf[256];
  for (const auto& r : reports) {
    std::snprintf(buf, sizeof buf, "%.4f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%lld,%lld,%lld,%lld\n", r.theta, r.precision,
                  r.recall, r.f1, r.accuracy, r.far, r.frr, static_cast<long long>(r.counts.ta),
                  static_cast<long long>(r.counts.fr), static_cast<long long>(r.counts.fa),
                  static_cast<long long>(r.counts.tr));
    out << buf;
  }
  return out.str();
}

std::string sweep_svg(std::span<const MetricsReport> reports) {
  constexpr int kPanel = 300, kPad = 40;
  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << 2 * (kPanel + 2 * kPad) << "\" height=\""
      << kPanel + 2 * kPad << "\">\n";
  auto panel = [&](int x0, const char* title, const char* xlabel, const char* ylabel, auto xy) {
    out << "<g transform=\"translate(" << x0 + kPad << "," << kPad << ")\">\n";
    out << "<rect width=\"" << kPanel << "\" height=\"" << kPanel << "\" fill=\"none\" stroke=\"black\"/>\n";
    out << "<text x=\"" << kPanel / 2 << "\" y=\"-10\" text-anchor=\"middle\">" << title << "</text>\n";
    out << "<text x=\"" << kPanel / 2 << "\" y=\"" << kPanel + 30 << "\" text-anchor=\"middle\">" << xlabel << "</text>\n";
    out << "<text x=\"-30\" y=\"" << kPanel / 2 << "\" transform=\"rotate(-90 -30 " << kPanel / 2
        << ")\" text-anchor=\"middle\">" << ylabel << "</text>\n";
    out << "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\" points=\"";
    char buf[64];
    for (const auto& r : reports) {
      const auto [x, y] = xy(r);
      std::snprintf(buf, sizeof buf, "%.2f,%.2f ", x * kPanel, (1.0 - y) * kPanel);
      out << buf;
    }
    out << "\"/>\n</g>\n";
  };
  panel(0, "Recall-Precision", "recall", "precision",
        [](const MetricsReport& r) { return std::pair{r.recall, r.precision}; });
  panel(kPanel + 2 * kPad, "FAR-FRR", "FRR", "FAR", [](const MetricsReport& r) { return std::pair{r.frr, r.far}; });
  out << "</svg>\n";
  return out.str();
}

}  // namespace aped
