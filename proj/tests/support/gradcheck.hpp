#pragma once

// Central finite-difference gradient checks against the reverse-mode
// gradients of aped::ag.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "aped/rng.hpp"
#include "aped/tensor.hpp"

namespace aped::oracle {

inline constexpr double kFdStep = 1e-6;
inline constexpr double kFdTolerance = 1e-5;
inline constexpr double kNormFloor = 1e-3;

/// ||analytic - numeric|| / max(||analytic||, ||numeric||, kNormFloor). The
/// floor keeps structurally zero gradients (key biases, unused embedding
/// rows) from turning rounding noise into a relative error of 1.
inline double relative_error(const std::vector<double>& analytic, const std::vector<double>& numeric) {
  double diff = 0, na = 0, nn = 0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
    na += analytic[i] * analytic[i];
    nn += numeric[i] * numeric[i];
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nn), kNormFloor});
}

/// Compares d loss / d inputs for the given coordinates (all coordinates
/// when `coords` is empty). `loss` must rebuild the graph from the current
/// input values every call. Returns the worst relative error over inputs.
inline double check_gradients(std::vector<ag::Tensor>& inputs, const std::function<ag::Tensor()>& loss,
                              std::size_t max_coords_per_input = 0, std::uint64_t coord_seed = 0) {
  for (auto& t : inputs) t.zero_grad();
  loss().backward();
  double worst = 0.0;
  CounterRng pick(coord_seed);
  for (auto& t : inputs) {
    const auto g = t.grad();
    std::vector<std::size_t> coords;
    if (max_coords_per_input == 0 || t.size() <= max_coords_per_input) {
      for (std::size_t i = 0; i < t.size(); ++i) coords.push_back(i);
    } else {
      for (std::size_t i = 0; i < max_coords_per_input; ++i) coords.push_back(pick.below(t.size()));
    }
    std::vector<double> analytic, numeric;
    auto values = t.mutable_values();
    for (std::size_t i : coords) {
      analytic.push_back(g.empty() ? 0.0 : g[i]);
      const double x = values[i];
      values[i] = x + kFdStep;
      double up, down;
      {
        ag::NoGradGuard no_grad;
        up = loss().item();
        values[i] = x - kFdStep;
        down = loss().item();
      }
      values[i] = x;
      numeric.push_back((up - down) / (2 * kFdStep));
    }
    worst = std::max(worst, relative_error(analytic, numeric));
  }
  return worst;
}

/// Random matrix with entries in [lo, hi).
inline ag::Tensor random_tensor(CounterRng& rng, int rows, int cols, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(static_cast<std::size_t>(rows) * cols);
  for (double& x : v) x = rng.uniform(lo, hi);
  return ag::Tensor::from({rows, cols}, std::move(v), true);
}

/// Scalar probe sum(w * y) with fixed random weights, so every output
/// element contributes a distinct sensitivity.
inline ag::Tensor probe(const ag::Tensor& y, std::uint64_t seed) {
  CounterRng rng(seed);
  std::vector<double> w(y.size());
  for (double& x : w) x = rng.uniform(-1.0, 1.0);
  return ag::sum(ag::mul(y, ag::Tensor::from(y.shape(), std::move(w))));
}

}  // namespace aped::oracle
