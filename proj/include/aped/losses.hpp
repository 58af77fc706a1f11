#pragma once

#include <span>
#include <string_view>

#include "aped/phoneme.hpp"
#include "aped/tensor.hpp"

namespace aped {

enum class EvalLossKind { bce, f1, focal };

const char* to_string(EvalLossKind kind);
EvalLossKind parse_eval_loss(std::string_view text);

struct LossWeights {
  double alpha = 0.1;  // accent auxiliary weight
  double beta = 0.3;   // ASR auxiliary weight
  double gamma = 0.5;  // focal exponent
  EvalLossKind eval_kind = EvalLossKind::focal;

  void validate() const;
};

inline constexpr double kProbClamp = 1e-12;
inline constexpr double kSoftF1Epsilon = 1e-9;

/// Mean over unmasked rows of -log softmax(logits)[label]. Returns a zero
/// constant when every row is masked.
ag::Tensor asr_loss(const ag::Tensor& logits, std::span<const int> labels, std::span<const int> mask);

/// -log softmax(logits)[accent] for a 1 x 6 logit row.
ag::Tensor accent_loss(const ag::Tensor& logits, AccentLabel accent);

// The evaluation losses take (k+1) x 1 probabilities whose row 0 is the
// <sos> slot, and k binary states; row 0 is excluded. Probabilities outside
// [0, 1] are rejected; logs use values clamped to [1e-12, 1 - 1e-12].

/// Mean over positions 1..k of -[e log p + (1 - e) log(1 - p)].
ag::Tensor bce_eval(const ag::Tensor& error_probs, std::span<const int> error_states);

/// 1 - 2TR / (2TR + FR + FA + eps) with soft counts TR = sum p e,
/// FR = sum p (1 - e), FA = sum (1 - p) e.
ag::Tensor soft_f1_eval(const ag::Tensor& error_probs, std::span<const int> error_states);

/// Mean over positions 1..k of -(1 - p_t)^gamma log p_t with p_t = p when
/// e = 1, else 1 - p.
ag::Tensor focal_eval(const ag::Tensor& error_probs, std::span<const int> error_states, double gamma);

ag::Tensor eval_loss(const LossWeights& weights, const ag::Tensor& error_probs, std::span<const int> error_states);

/// l_asr + alpha * l_a.
ag::Tensor combined_pretrain_loss(const ag::Tensor& asr, const ag::Tensor& accent, double alpha);

/// l_eval + beta * l_asr + alpha * l_a.
ag::Tensor combined_aped_loss(const ag::Tensor& eval, const ag::Tensor& asr, const ag::Tensor& accent, double alpha,
                              double beta);

}  // namespace aped
