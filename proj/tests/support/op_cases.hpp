#pragma once

// Finite-difference cases for every primitive op of aped::ag. Each case
// builds its inputs from the given rng and returns the worst relative error.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "aped/rng.hpp"
#include "aped/tensor.hpp"
#include "support/gradcheck.hpp"

namespace aped::oracle {

struct OpCase {
  std::string name;
  std::function<double(CounterRng&)> body;
};

inline double unary_check(CounterRng& rng, const std::function<ag::Tensor(const ag::Tensor&)>& op, double lo,
                          double hi) {
  std::vector<ag::Tensor> in{random_tensor(rng, 3, 4, lo, hi)};
  return check_gradients(in, [&] { return probe(op(in[0]), 5); });
}

inline std::vector<OpCase> primitive_op_cases() {
  using ag::Tensor;
  std::vector<OpCase> cases;
  auto add = [&cases](std::string name, std::function<double(CounterRng&)> body) {
    cases.push_back({std::move(name), std::move(body)});
  };

  // Elementwise ops.
  add("relu", [](CounterRng& r) {
    // Keep inputs away from the kink.
    std::vector<double> v(12);
    for (double& x : v) x = (r.below(2) ? 1 : -1) * r.uniform(0.1, 1.0);
    std::vector<Tensor> in{Tensor::from({3, 4}, v, true)};
    return check_gradients(in, [&] { return probe(ag::relu(in[0]), 5); });
  });
  add("sigmoid", [](CounterRng& r) { return unary_check(r, ag::sigmoid, -3, 3); });
  add("tanh", [](CounterRng& r) { return unary_check(r, ag::tanh, -2, 2); });
  add("log", [](CounterRng& r) { return unary_check(r, ag::log, 0.2, 3); });
  add("exp", [](CounterRng& r) { return unary_check(r, ag::exp, -2, 2); });
  add("pow", [](CounterRng& r) {
    return unary_check(r, [](const Tensor& x) { return ag::pow_scalar(x, 0.5); }, 0.2, 2);
  });
  add("scale", [](CounterRng& r) {
    return unary_check(r, [](const Tensor& x) { return ag::scale(x, -1.7); }, -1, 1);
  });
  add("add_scalar", [](CounterRng& r) {
    return unary_check(r, [](const Tensor& x) { return ag::pow_scalar(ag::add_scalar(x, 2.0), 2.0); }, -1, 1);
  });
  add("clamp", [](CounterRng& r) {
    std::vector<double> v(12);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = i % 3 == 0 ? r.uniform(0.6, 1.0) : r.uniform(-0.4, 0.4);
    std::vector<Tensor> in{Tensor::from({3, 4}, v, true)};
    return check_gradients(in, [&] { return probe(ag::clamp(in[0], -0.5, 0.5), 5); });
  });

  // Binary ops.
  using BinOp = Tensor (*)(const Tensor&, const Tensor&);
  const std::pair<const char*, BinOp> ops[] = {{"add", ag::add}, {"sub", ag::sub}, {"mul", ag::mul}, {"div", ag::div}};
  for (const auto& [name, op] : ops) {
    add(name, [op = op](CounterRng& r) {
      std::vector<Tensor> in{random_tensor(r, 3, 4), random_tensor(r, 3, 4, 0.5, 2.0)};
      return check_gradients(in, [&] { return probe(op(in[0], in[1]), 6); });
    });
  }
  add("add_broadcast", [](CounterRng& r) {
    std::vector<Tensor> in{random_tensor(r, 3, 4), random_tensor(r, 1, 4)};
    return check_gradients(in, [&] { return probe(ag::add(in[0], in[1]), 6); });
  });
  add("sub_broadcast", [](CounterRng& r) {
    std::vector<Tensor> in{random_tensor(r, 3, 4), random_tensor(r, 1, 4)};
    return check_gradients(in, [&] { return probe(ag::sub(in[0], in[1]), 6); });
  });

  // Linear algebra ops.
  add("matmul", [](CounterRng& r) {
    std::vector<Tensor> in{random_tensor(r, 3, 5), random_tensor(r, 5, 2)};
    return check_gradients(in, [&] { return probe(ag::matmul(in[0], in[1]), 7); });
  });
  add("affine", [](CounterRng& r) {
    std::vector<Tensor> in{random_tensor(r, 3, 5), random_tensor(r, 5, 2), random_tensor(r, 1, 2)};
    return check_gradients(in, [&] { return probe(ag::affine(in[0], in[1], in[2]), 7); });
  });
  add("transpose", [](CounterRng& r) {
    std::vector<Tensor> in{random_tensor(r, 3, 5)};
    return check_gradients(in, [&] { return probe(ag::transpose(in[0]), 7); });
  });

  // Structural ops.
  add("concat0", [](CounterRng& r) {
    std::vector<Tensor> in{random_tensor(r, 2, 3), random_tensor(r, 1, 3)};
    return check_gradients(in, [&] { return probe(ag::concat({in[0], in[1]}, 0), 8); });
  });
  add("concat1", [](CounterRng& r) {
    std::vector<Tensor> in{random_tensor(r, 2, 3), random_tensor(r, 2, 1)};
    return check_gradients(in, [&] { return probe(ag::concat({in[0], in[1]}, 1), 8); });
  });
  add("slice", [](CounterRng& r) {
    std::vector<Tensor> in{random_tensor(r, 4, 5)};
    return check_gradients(in, [&] { return probe(ag::mul(ag::slice(in[0], 0, 1, 3), ag::slice(in[0], 0, 2, 4)), 8); }) +
           check_gradients(in, [&] { return probe(ag::slice(in[0], 1, 1, 4), 8); });
  });
  add("embedding", [](CounterRng& r) {
    std::vector<Tensor> in{random_tensor(r, 6, 3)};
    const std::vector<int> ids{0, 3, 3, 5};
    return check_gradients(in, [&] { return probe(ag::embedding_lookup(in[0], ids), 8); });
  });
  add("masked_fill", [](CounterRng& r) {
    std::vector<Tensor> in{random_tensor(r, 3, 3)};
    const std::vector<std::uint8_t> mask{0, 1, 1, 0, 0, 1, 0, 0, 0};
    return check_gradients(in, [&] { return probe(ag::masked_fill(in[0], mask, -5.0), 8); });
  });
  add("pick", [](CounterRng& r) {
    std::vector<Tensor> in{random_tensor(r, 3, 4)};
    const std::vector<int> idx{2, 0, 3};
    return check_gradients(in, [&] { return probe(ag::pick(in[0], idx), 8); });
  });

  // Reductions and normalisation.
  for (int axis : {-1, 0, 1}) {
    add(axis == -1 ? "sum_all" : axis == 0 ? "sum_rows" : "sum_cols", [axis](CounterRng& r) {
      std::vector<Tensor> in{random_tensor(r, 3, 4)};
      return check_gradients(in, [&] { return probe(ag::sum(ag::mul(in[0], in[0]), axis), 9); });
    });
    add(axis == -1 ? "mean_all" : axis == 0 ? "mean_rows" : "mean_cols", [axis](CounterRng& r) {
      std::vector<Tensor> in{random_tensor(r, 3, 4)};
      return check_gradients(in, [&] { return probe(ag::mean(ag::mul(in[0], in[0]), axis), 9); });
    });
  }
  add("softmax_rows", [](CounterRng& r) {
    std::vector<Tensor> in{random_tensor(r, 3, 4, -2, 2)};
    return check_gradients(in, [&] { return probe(ag::softmax(in[0], 1), 9); });
  });
  add("softmax_cols", [](CounterRng& r) {
    std::vector<Tensor> in{random_tensor(r, 3, 4, -2, 2)};
    return check_gradients(in, [&] { return probe(ag::softmax(in[0], 0), 9); });
  });
  add("log_softmax", [](CounterRng& r) {
    std::vector<Tensor> in{random_tensor(r, 3, 4, -2, 2)};
    return check_gradients(in, [&] { return probe(ag::log_softmax(in[0]), 9); });
  });
  add("layer_norm", [](CounterRng& r) {
    std::vector<Tensor> in{random_tensor(r, 3, 5), random_tensor(r, 1, 5, 0.5, 1.5), random_tensor(r, 1, 5)};
    return check_gradients(in, [&] { return probe(ag::layer_norm(in[0], in[1], in[2]), 9); });
  });

  // Multi-head attention.
  add("attention", [](CounterRng& r) {
    std::vector<Tensor> in{random_tensor(r, 3, 4), random_tensor(r, 5, 4), random_tensor(r, 5, 4)};
    return check_gradients(in, [&] { return probe(ag::multi_head_attention(in[0], in[1], in[2], 2), 10); });
  });
  add("attention_masked", [](CounterRng& r) {
    std::vector<Tensor> in{random_tensor(r, 4, 6), random_tensor(r, 4, 6), random_tensor(r, 4, 6)};
    std::vector<std::uint8_t> mask(16, 0);
    for (int i = 0; i < 4; ++i)
      for (int j = i + 1; j < 4; ++j) mask[i * 4 + j] = 1;
    return check_gradients(in, [&] { return probe(ag::multi_head_attention(in[0], in[1], in[2], 3, mask), 10); });
  });
  return cases;
}

/// Rng for point `point` of case `name`.
inline CounterRng case_rng(const std::string& name, std::uint64_t point) { return CounterRng(derive_key(77, name, point)); }

}  // namespace aped::oracle
