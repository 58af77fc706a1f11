#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <functional>

#include "aped/binary_io.hpp"
#include "aped/error.hpp"
#include "aped/tensor.hpp"
#include "support/gradcheck.hpp"
#include "support/op_cases.hpp"

using namespace aped;
using ag::Tensor;
using oracle::check_gradients;
using oracle::kFdTolerance;
using oracle::probe;
using oracle::random_tensor;

TEST_CASE("every primitive op matches finite differences") {
  for (const auto& c : oracle::primitive_op_cases()) {
    for (std::uint64_t point = 0; point < 10; ++point) {
      CounterRng rng = oracle::case_rng(c.name, point);
      const double err = c.body(rng);
      INFO(c.name << " point " << point << " relative error " << err);
      CHECK(err < kFdTolerance);
    }
  }
}

TEST_CASE("attention matches the composite definition") {
  CounterRng r(3);
  const Tensor q = random_tensor(r, 3, 4), k = random_tensor(r, 5, 4), v = random_tensor(r, 5, 4);
  std::vector<double> probs;
  const Tensor fused = ag::multi_head_attention(q, k, v, 2, {}, &probs);
  REQUIRE(probs.size() == 2 * 3 * 5);
  for (int h = 0; h < 2; ++h) {
    const Tensor qh = ag::slice(q, 1, 2 * h, 2 * h + 2), kh = ag::slice(k, 1, 2 * h, 2 * h + 2),
                 vh = ag::slice(v, 1, 2 * h, 2 * h + 2);
    const Tensor p = ag::softmax(ag::scale(ag::matmul(qh, ag::transpose(kh)), 1 / std::sqrt(2.0)), 1);
    const Tensor o = ag::matmul(p, vh);
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 2; ++j) CHECK(fused.at(i, 2 * h + j) == doctest::Approx(o.at(i, j)).epsilon(1e-13));
      for (int j = 0; j < 5; ++j) CHECK(probs[h * 15 + i * 5 + j] == doctest::Approx(p.at(i, j)).epsilon(1e-13));
    }
  }
}

TEST_CASE("leaf gradients accumulate until zeroed") {
  Tensor x = Tensor::from({1, 2}, {1.0, 2.0}, true);
  ag::sum(ag::mul(x, x)).backward();
  ag::sum(x).backward();
  CHECK(x.grad()[0] == doctest::Approx(3.0));
  CHECK(x.grad()[1] == doctest::Approx(5.0));
  x.zero_grad();
  CHECK(x.grad()[0] == 0.0);
}

TEST_CASE("no-grad mode records nothing") {
  Tensor x = Tensor::from({1, 2}, {1.0, 2.0}, true);
  Tensor y;
  {
    ag::NoGradGuard guard;
    CHECK_FALSE(ag::grad_enabled());
    y = ag::sum(ag::mul(x, x));
  }
  CHECK(ag::grad_enabled());
  CHECK_FALSE(y.requires_grad());
  CHECK_THROWS_AS(y.backward(), Error);
}

TEST_CASE("shape errors are reported") {
  const Tensor a = Tensor::zeros({2, 3}), b = Tensor::zeros({2, 3});
  CHECK_THROWS_AS(ag::matmul(a, b), Error);
  CHECK_THROWS_AS(ag::add(a, Tensor::zeros({3, 2})), Error);
  CHECK_THROWS_AS(Tensor::from({2, 2}, {1.0}), Error);
  CHECK_THROWS_AS(ag::slice(a, 1, 2, 4), Error);
}

TEST_CASE("finite checks catch NaN") {
  const bool before = ag::finite_checks();
  ag::set_finite_checks(true);
  CHECK_THROWS_AS(ag::log(Tensor::from({1, 1}, {-1.0})), Error);
  ag::set_finite_checks(before);
}

TEST_CASE("adam first step by hand") {
  Tensor p = Tensor::from({1, 1}, {0.5}, true);
  p.mutable_grad()[0] = 1.0;
  std::vector<Tensor> params{p};
  ag::AdamState state;
  ag::adam_step(params, state, ag::AdamConfig{});
  // m = 0.1, v = 0.001; m_hat = 1, v_hat = 1; step = lr * 1 / (1 + 1e-8).
  CHECK(p.item() == doctest::Approx(0.5 - 1e-3 / (1.0 + 1e-8)).epsilon(1e-15));

  p.mutable_grad()[0] = -2.0;
  ag::adam_step(params, state, ag::AdamConfig{});
  const double m = 0.9 * 0.1 + 0.1 * -2.0, v = 0.999 * 0.001 + 0.001 * 4.0;
  const double mh = m / (1 - 0.81), vh = v / (1 - 0.999 * 0.999);
  CHECK(p.item() == doctest::Approx(0.5 - 1e-3 / (1.0 + 1e-8) - 1e-3 * mh / (std::sqrt(vh) + 1e-8)).epsilon(1e-14));
}

TEST_CASE("gradient clipping scales to the limit") {
  Tensor a = Tensor::from({1, 2}, {0, 0}, true), b = Tensor::from({1, 1}, {0}, true);
  a.mutable_grad()[0] = 3;
  a.mutable_grad()[1] = 0;
  b.mutable_grad()[0] = 4;
  std::vector<Tensor> params{a, b};
  CHECK(ag::clip_grad_norm(params, 1.0) == doctest::Approx(5.0));
  CHECK(a.grad()[0] == doctest::Approx(0.6));
  CHECK(b.grad()[0] == doctest::Approx(0.8));
  CHECK(ag::clip_grad_norm(params, 0.0) == doctest::Approx(1.0));
}

TEST_CASE("checkpoint round trip and corruption") {
  ag::NamedTensors t;
  t.emplace("b", Tensor::from({2, 2}, {1, 2, 3, 4}));
  t.emplace("a", Tensor::scalar(-0.25));
  const auto path = (std::filesystem::temp_directory_path() / "aped_ckpt_test.ckpt").string();
  ag::save_checkpoint(t, path);
  const auto back = ag::load_checkpoint(path);
  REQUIRE(back.size() == 2);
  CHECK(back.at("a").item() == -0.25);
  CHECK(back.at("b").shape() == ag::Shape{2, 2});
  CHECK(back.at("b").at(1, 0) == 3.0);
  CHECK(ag::serialize_checkpoint(back) == ag::serialize_checkpoint(t));

  auto bytes = io::read_file(path);
  bytes[0] = 'Z';
  io::write_file(path, bytes);
  CHECK_THROWS_AS(ag::load_checkpoint(path), FormatError);
  bytes[0] = 'A';
  bytes.pop_back();
  io::write_file(path, bytes);
  CHECK_THROWS_AS(ag::load_checkpoint(path), FormatError);
}
