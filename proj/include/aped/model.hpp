#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "aped/alignment.hpp"
#include "aped/features.hpp"
#include "aped/phoneme.hpp"
#include "aped/tensor.hpp"

namespace aped {

enum class Pooling { global_mean, gru };
enum class DecoderMask { causal, full };
enum class ModelMode { asr_baseline, conditioned };

const char* to_string(Pooling p);
const char* to_string(DecoderMask m);
const char* to_string(ModelMode m);
Pooling parse_pooling(std::string_view text);
DecoderMask parse_decoder_mask(std::string_view text);
ModelMode parse_model_mode(std::string_view text);

struct ModelConfig {
  int enc_layers = 2;
  int dec_layers = 2;
  int d_model = 64;
  int n_heads = 4;
  int d_ff = 128;
  int vocab = kVocabSize;
  int n_accents = kNumAccents;
  int raw_dim = kRawFeatureDim;
  int stack = 5;
  int subsample = 4;
  Pooling pooling = Pooling::global_mean;
  DecoderMask decoder_mask = DecoderMask::causal;

  /// 2+2 layers, d_model 64, 4 heads, d_ff 128.
  static ModelConfig desk();
  /// 6+6 layers, d_model 512, 4 heads, d_ff 1024.
  static ModelConfig large();

  int input_dim() const { return raw_dim * stack; }
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

struct Linear {
  ag::Tensor w;  // in x out
  ag::Tensor b;  // 1 x out
};

struct LayerNormWeights {
  ag::Tensor gain;
  ag::Tensor bias;
};

struct AttentionWeights {
  Linear q, k, v, o;
};

struct EncoderLayerWeights {
  LayerNormWeights ln_attn;
  AttentionWeights self_attn;
  LayerNormWeights ln_ff;
  Linear ff1, ff2;
};

struct DecoderLayerWeights {
  LayerNormWeights ln_self;
  AttentionWeights self_attn;
  LayerNormWeights ln_cross;
  AttentionWeights cross_attn;
  LayerNormWeights ln_ff;
  Linear ff1, ff2;
};

struct GruWeights {
  ag::Tensor w_ih, w_hh;  // d x 3d, gate order (reset, update, new)
  ag::Tensor b_ih, b_hh;  // 1 x 3d
};

/// Typed handles onto a Model's named parameters.
struct Weights {
  Linear input_proj;
  std::vector<EncoderLayerWeights> encoder;
  LayerNormWeights encoder_norm;
  Linear accent_head;
  GruWeights gru;  // only when pooling == gru
  ag::Tensor embedding;
  std::vector<DecoderLayerWeights> decoder;
  LayerNormWeights decoder_norm;
  Linear phoneme_head;
  Linear error_head;
};

/// One recorded attention matrix (rows = queries, cols = keys).
struct AttentionMap {
  std::string type;  // enc_self, dec_self, dec_cross
  int layer = 0;
  int head = 0;
  int rows = 0;
  int cols = 0;
  std::vector<double> weights;
  std::vector<std::uint8_t> mask;  // 1 where the key was masked out
};

using AttentionTrace = std::vector<AttentionMap>;

struct EncoderOutput {
  ag::Tensor memory;         // frames' x d_model
  ag::Tensor accent_logits;  // 1 x n_accents
};

struct ConditionedOutput {
  ag::Tensor phoneme_logits;  // (k+1) x vocab
  ag::Tensor error_logits;    // (k+1) x 1
  ag::Tensor error_probs;     // (k+1) x 1, sigmoid(error_logits)
};

/// Decoder passes counted by the instrumented inference entry points.
struct PassCounter {
  long decoder_passes = 0;
  long encoder_passes = 0;
};

/// Transformer encoder-decoder with an accent head on the encoder and
/// phoneme / error-state heads on the decoder. Pre-norm residual blocks,
/// sinusoidal positions, ReLU feed-forward, no dropout.
///
/// Parameters are initialised from (seed, parameter name): linear weights
/// U(-1/sqrt(fan_in), 1/sqrt(fan_in)), embeddings U(-1, 1), biases 0,
/// layer-norm gains 1.
class Model {
 public:
  Model(const ModelConfig& cfg, ModelMode mode, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  ModelMode mode() const { return mode_; }
  void set_mode(ModelMode mode) { mode_ = mode; }

  /// Sorted by name.
  const ag::NamedTensors& parameters() const { return params_; }
  std::vector<ag::Tensor> parameter_list() const;
  const Weights& weights() const { return weights_; }
  std::size_t parameter_count() const;

  ag::NamedTensors to_checkpoint() const;
  static Model from_checkpoint(const ag::NamedTensors& tensors);
  void save(const std::string& path) const;
  static Model load(const std::string& path);
  /// Copies parameter values from another model with identical names/shapes.
  void copy_parameters_from(const Model& other);

  // Graph-building forward passes. Gradients flow to the parameters when
  // grad mode is enabled.
  EncoderOutput encode(const StackedFeatures& features, AttentionTrace* trace = nullptr) const;
  ConditionedOutput decode_conditioned(const ag::Tensor& memory, std::span<const int> target,
                                       AttentionTrace* trace = nullptr, PassCounter* counter = nullptr) const;
  /// Causal decoding of [SOS, c1..cn]; returns (n+1) x vocab logits.
  ag::Tensor decode_asr_teacher_forced(const ag::Tensor& memory, std::span<const int> canonical,
                                       AttentionTrace* trace = nullptr, PassCounter* counter = nullptr) const;

  /// Greedy decoding from SOS until EOS or max_len emitted phonemes. The
  /// argmax ranges over the 39 phonemes and EOS. Runs without recording a
  /// graph.
  PhonemeSequence decode_asr_autoregressive(const ag::Tensor& memory, int max_len,
                                            PassCounter* counter = nullptr) const;

  /// ASR-based pipeline: recognise, align against target, fold into error
  /// states.
  ErrorStates baseline_aped(const StackedFeatures& features, const PhonemeSequence& target,
                            const AlignCosts& costs = {}, int max_len = -1, PassCounter* counter = nullptr,
                            PhonemeSequence* recognized = nullptr) const;

  /// Conditioned inference: one encoder pass and one decoder pass, no graph.
  std::vector<double> predict_error_probs(const StackedFeatures& features, const PhonemeSequence& target,
                                          PassCounter* counter = nullptr, std::vector<double>* accent_probs = nullptr) const;

  /// Forward pass in the model's mode recording every attention matrix.
  AttentionTrace dump_attention(const StackedFeatures& features, const PhonemeSequence& decoder_text) const;

  /// Stacks raw features with the configured (stack, subsample).
  StackedFeatures prepare(const FeatureMatrix& raw) const;

 private:
  struct CrossCache {
    std::vector<ag::Tensor> keys;    // per layer, frames' x d_model
    std::vector<ag::Tensor> values;  // per layer, frames' x d_model
  };

  void build_parameters(std::uint64_t seed);
  void bind_weights();
  CrossCache cross_cache(const ag::Tensor& memory) const;
  ag::Tensor run_decoder(std::span<const int> input_ids, const CrossCache& cache, bool causal,
                         AttentionTrace* trace) const;

  ModelConfig cfg_;
  ModelMode mode_;
  ag::NamedTensors params_;
  Weights weights_;
};

/// Sinusoidal positional encoding, positions x d_model.
ag::Tensor positional_encoding(int positions, int d_model);

/// Row i may attend to keys 0..i only. Returns an n x n mask (1 = blocked).
std::vector<std::uint8_t> causal_mask(int n);

}  // namespace aped
