#include "aped/losses.hpp"

#include <cmath>

#include "aped/error.hpp"

namespace aped {

using ag::Tensor;

const char* to_string(EvalLossKind kind) {
  switch (kind) {
    case EvalLossKind::bce: return "bce";
    case EvalLossKind::f1: return "f1";
    case EvalLossKind::focal: return "focal";
  }
  return "?";
}

EvalLossKind parse_eval_loss(std::string_view text) {
  if (text == "bce") return EvalLossKind::bce;
  if (text == "f1") return EvalLossKind::f1;
  if (text == "focal") return EvalLossKind::focal;
  throw Error("unknown eval loss '" + std::string(text) + "' (expected bce, f1 or focal)");
}

void LossWeights::validate() const {
  if (!(alpha >= 0.0) || !(beta >= 0.0)) throw Error("loss weights alpha and beta must be >= 0");
  if (!(gamma >= 0.0)) throw Error("focal gamma must be >= 0");
}

Tensor asr_loss(const Tensor& logits, std::span<const int> labels, std::span<const int> mask) {
  const int n = logits.rows();
  if (static_cast<int>(labels.size()) != n || static_cast<int>(mask.size()) != n) {
    throw Error("asr_loss: logits rows (" + std::to_string(n) + "), labels (" + std::to_string(labels.size()) +
                ") and mask (" + std::to_string(mask.size()) + ") must have equal length");
  }
  std::vector<int> safe_labels(labels.begin(), labels.end());
  std::vector<double> weights(n, 0.0);
  int active = 0;
  for (int i = 0; i < n; ++i) {
    if (mask[i]) {
      if (labels[i] < 0 || labels[i] >= logits.cols()) throw Error("asr_loss: label out of range");
      ++active;
    } else {
      safe_labels[i] = 0;
    }
  }
  if (active == 0) return Tensor::scalar(0.0);
  for (int i = 0; i < n; ++i) weights[i] = mask[i] ? -1.0 / active : 0.0;
  const Tensor picked = ag::pick(ag::log_softmax(logits), safe_labels);
  return ag::sum(ag::mul(picked, Tensor::column(std::move(weights))));
}

Tensor accent_loss(const Tensor& logits, AccentLabel accent) {
  if (logits.rows() != 1 || logits.cols() != kNumAccents) throw Error("accent_loss: expected 1 x 6 logits");
  const int idx[1] = {accent.id};
  return ag::scale(ag::sum(ag::pick(ag::log_softmax(logits), idx)), -1.0);
}

namespace {

// Validates shapes/ranges and returns the rows for positions 1..k.
Tensor error_rows(const Tensor& probs, std::span<const int> states, const char* who) {
  if (probs.cols() != 1 || probs.rows() != static_cast<int>(states.size()) + 1) {
    throw Error(std::string(who) + ": expected (k+1) x 1 probabilities for k = " + std::to_string(states.size()));
  }
  if (states.empty()) throw Error(std::string(who) + ": empty error-state sequence");
  for (double p : probs.values()) {
    if (!(p >= 0.0 && p <= 1.0)) throw Error(std::string(who) + ": probability outside [0, 1]");
  }
  for (int e : states) {
    if (e != 0 && e != 1) throw Error(std::string(who) + ": error states must be 0 or 1");
  }
  return ag::slice(probs, 0, 1, probs.rows());
}

Tensor states_column(std::span<const int> states) {
  std::vector<double> v(states.begin(), states.end());
  return Tensor::column(std::move(v));
}

}  // namespace

Tensor bce_eval(const Tensor& error_probs, std::span<const int> error_states) {
  const Tensor p = ag::clamp(error_rows(error_probs, error_states, "bce_eval"), kProbClamp, 1.0 - kProbClamp);
  const Tensor e = states_column(error_states);
  const Tensor one_minus_e = Tensor::column(std::vector<double>(error_states.size(), 1.0)) - e;
  const Tensor ll = ag::mul(e, ag::log(p)) + ag::mul(one_minus_e, ag::log(ag::add_scalar(ag::scale(p, -1.0), 1.0)));
  return ag::scale(ag::mean(ll), -1.0);
}

Tensor soft_f1_eval(const Tensor& error_probs, std::span<const int> error_states) {
  const Tensor p = error_rows(error_probs, error_states, "soft_f1_eval");
  const Tensor e = states_column(error_states);
  const Tensor tr = ag::sum(ag::mul(p, e));
  const Tensor sum_p = ag::sum(p);
  double positives = 0.0;
  for (int s : error_states) positives += s;
  // 2TR + FR + FA = sum(p) + sum(e), since FR = sum(p) - TR and FA = sum(e) - TR.
  const Tensor denom = ag::add_scalar(sum_p, positives + kSoftF1Epsilon);
  const Tensor f1 = ag::div(ag::scale(tr, 2.0), denom);
  return ag::add_scalar(ag::scale(f1, -1.0), 1.0);
}

Tensor focal_eval(const Tensor& error_probs, std::span<const int> error_states, double gamma) {
  if (!(gamma >= 0.0)) throw Error("focal_eval: gamma must be >= 0");
  const Tensor p = ag::clamp(error_rows(error_probs, error_states, "focal_eval"), kProbClamp, 1.0 - kProbClamp);
  // p_t = (1 - e) + (2e - 1) p
  std::vector<double> offset(error_states.size()), slope(error_states.size());
  for (std::size_t i = 0; i < error_states.size(); ++i) {
    offset[i] = 1.0 - error_states[i];
    slope[i] = 2.0 * error_states[i] - 1.0;
  }
  const Tensor pt = ag::add(ag::mul(p, Tensor::column(std::move(slope))), Tensor::column(std::move(offset)));
  Tensor per_position = ag::log(pt);
  if (gamma != 0.0) {
    per_position = ag::mul(ag::pow_scalar(ag::add_scalar(ag::scale(pt, -1.0), 1.0), gamma), per_position);
  }
  return ag::scale(ag::mean(per_position), -1.0);
}

Tensor eval_loss(const LossWeights& weights, const Tensor& error_probs, std::span<const int> error_states) {
  switch (weights.eval_kind) {
    case EvalLossKind::bce: return bce_eval(error_probs, error_states);
    case EvalLossKind::f1: return soft_f1_eval(error_probs, error_states);
    case EvalLossKind::focal: return focal_eval(error_probs, error_states, weights.gamma);
  }
  throw Error("unknown eval loss kind");
}

Tensor combined_pretrain_loss(const Tensor& asr, const Tensor& accent, double alpha) {
  if (alpha == 0.0) return asr;
  return ag::add(asr, ag::scale(accent, alpha));
}

Tensor combined_aped_loss(const Tensor& eval, const Tensor& asr, const Tensor& accent, double alpha, double beta) {
  Tensor total = eval;
  if (beta != 0.0) total = ag::add(total, ag::scale(asr, beta));
  if (alpha != 0.0) total = ag::add(total, ag::scale(accent, alpha));
  return total;
}

}  // namespace aped
