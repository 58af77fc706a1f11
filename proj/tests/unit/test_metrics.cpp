#include <doctest.h>

#include <cmath>

#include "aped/error.hpp"
#include "aped/metrics.hpp"
#include "aped/rng.hpp"
#include "support/oracles.hpp"

using namespace aped;

TEST_CASE("confusion counts partition the positions") {
  CounterRng rng(21);
  for (int trial = 0; trial < 1000; ++trial) {
    const int k = rng.range(1, 40);
    std::vector<int> pred(k), truth(k);
    for (int i = 0; i < k; ++i) {
      pred[i] = static_cast<int>(rng.below(2));
      truth[i] = static_cast<int>(rng.below(2));
    }
    const auto c = confusion(pred, truth);
    CHECK(c.total() == k);
    const auto r = report(c);
    const auto ref = oracle::reference_metrics(pred, truth);
    CHECK(std::abs(r.precision - ref.precision) <= 1e-12);
    CHECK(std::abs(r.recall - ref.recall) <= 1e-12);
    CHECK(std::abs(r.f1 - ref.f1) <= 1e-12);
    CHECK(std::abs(r.far - ref.far) <= 1e-12);
    CHECK(std::abs(r.frr - ref.frr) <= 1e-12);
    CHECK(std::abs(r.accuracy - ref.accuracy) <= 1e-12);
  }
}

TEST_CASE("hand-computed report") {
  // TR=2 FR=1 FA=1 TA=4
  const std::vector<int> pred{1, 1, 1, 0, 0, 0, 0, 0};
  const std::vector<int> truth{1, 1, 0, 1, 0, 0, 0, 0};
  const auto r = report(confusion(pred, truth));
  CHECK(r.counts == ConfusionCounts{4, 1, 1, 2});
  CHECK(r.precision == doctest::Approx(2.0 / 3.0));
  CHECK(r.recall == doctest::Approx(2.0 / 3.0));
  CHECK(r.f1 == doctest::Approx(2.0 / 3.0));
  CHECK(r.far == doctest::Approx(1.0 / 3.0));
  CHECK(r.frr == doctest::Approx(1.0 / 5.0));
  CHECK(r.accuracy == doctest::Approx(6.0 / 8.0));
  CHECK_FALSE(r.degenerate);
}

TEST_CASE("zero denominators are flagged") {
  const auto r = report(confusion(std::vector<int>{0, 0}, std::vector<int>{0, 0}));
  CHECK(r.precision == 0.0);
  CHECK(r.recall == 0.0);
  CHECK(r.f1 == 0.0);
  CHECK(r.degenerate);
}

TEST_CASE("binarize uses >= theta") {
  const std::vector<double> p{0.49, 0.5, 0.51};
  CHECK(binarize(p, 0.5) == std::vector<int>{0, 1, 1});
  CHECK_THROWS_AS(binarize(p, 0.0), Error);
  CHECK_THROWS_AS(binarize(p, 1.0), Error);
}

TEST_CASE("mismatched lengths are rejected") {
  CHECK_THROWS_AS(confusion(std::vector<int>{1}, std::vector<int>{1, 0}), Error);
  CHECK_THROWS_AS(confusion(std::vector<int>{2}, std::vector<int>{1}), Error);
}

TEST_CASE("theta grid parsing") {
  const auto g = default_theta_grid();
  REQUIRE(g.size() == 9);
  CHECK(g.front() == 0.1);
  CHECK(g.back() == 0.9);
  CHECK(parse_theta_grid("0.1:0.9:0.1") == g);
  CHECK(parse_theta_grid("0.25:0.75:0.25") == std::vector<double>{0.25, 0.5, 0.75});
  CHECK_THROWS_AS(parse_theta_grid("0.1:0.9"), Error);
  CHECK_THROWS_AS(parse_theta_grid("0.5:0.1:0.1"), Error);
  CHECK_THROWS_AS(parse_theta_grid("0:0.5:0.1"), Error);
  CHECK_THROWS_AS(parse_theta_grid("0.1:0.9:0"), Error);
}

TEST_CASE("sweep pools counts and is monotone") {
  CounterRng rng(22);
  std::vector<UtterancePrediction> data;
  for (int u = 0; u < 50; ++u) {
    UtterancePrediction p;
    const int k = rng.range(5, 30);
    for (int i = 0; i < k; ++i) {
      p.probs.push_back(rng.uniform());
      p.states.push_back(static_cast<int>(rng.below(2)));
    }
    data.push_back(std::move(p));
  }
  const auto grid = default_theta_grid();
  const auto reports = theta_sweep(data, grid);
  REQUIRE(reports.size() == grid.size());
  for (std::size_t i = 0; i < reports.size(); ++i) {
    ConfusionCounts pooled;
    for (const auto& p : data) pooled += confusion(binarize(p.probs, grid[i]), p.states);
    CHECK(reports[i].counts == pooled);
    CHECK(reports[i].theta == grid[i]);
    if (i > 0) {
      CHECK(reports[i].far >= reports[i - 1].far);
      CHECK(reports[i].frr <= reports[i - 1].frr);
    }
  }
  const auto csv = sweep_csv(reports);
  CHECK(csv.rfind("theta,precision,recall,f1,accuracy,far,frr,ta,fr,fa,tr\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 10);
  const auto svg = sweep_svg(reports);
  CHECK(svg.find("<svg") != std::string::npos);
}
