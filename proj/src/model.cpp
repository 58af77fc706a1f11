#include "aped/model.hpp"

#include <algorithm>
#include <cmath>

#include "aped/error.hpp"
#include "aped/rng.hpp"

namespace aped {

using ag::Tensor;

const char* to_string(Pooling p) { return p == Pooling::gru ? "gru" : "global_mean"; }
const char* to_string(DecoderMask m) { return m == DecoderMask::full ? "full" : "causal"; }
const char* to_string(ModelMode m) { return m == ModelMode::asr_baseline ? "asr_baseline" : "conditioned"; }

Pooling parse_pooling(std::string_view text) {
  if (text == "global_mean") return Pooling::global_mean;
  if (text == "gru") return Pooling::gru;
  throw Error("unknown pooling '" + std::string(text) + "' (expected global_mean or gru)");
}

DecoderMask parse_decoder_mask(std::string_view text) {
  if (text == "causal") return DecoderMask::causal;
  if (text == "full") return DecoderMask::full;
  throw Error("unknown decoder mask '" + std::string(text) + "' (expected causal or full)");
}

ModelMode parse_model_mode(std::string_view text) {
  if (text == "asr_baseline" || text == "asr") return ModelMode::asr_baseline;
  if (text == "conditioned") return ModelMode::conditioned;
  throw Error("unknown model mode '" + std::string(text) + "' (expected asr_baseline or conditioned)");
}

ModelConfig ModelConfig::desk() { return ModelConfig{}; }

ModelConfig ModelConfig::large() {
  ModelConfig cfg;
  cfg.enc_layers = 6;
  cfg.dec_layers = 6;
  cfg.d_model = 512;
  cfg.n_heads = 4;
  cfg.d_ff = 1024;
  return cfg;
}

void ModelConfig::validate() const {
  if (enc_layers < 1 || dec_layers < 1) throw Error("model needs at least one encoder and one decoder layer");
  if (d_model < 2 || n_heads < 1 || d_model % n_heads != 0) throw Error("d_model must be divisible by n_heads");
  if (d_model % 2 != 0) throw Error("d_model must be even for sinusoidal positions");
  if (d_ff < 1) throw Error("d_ff must be positive");
  if (vocab != kVocabSize) throw Error("vocab must be 42");
  if (n_accents != kNumAccents) throw Error("n_accents must be 6");
  if (raw_dim < 1 || stack < 1 || subsample < 1) throw Error("raw_dim, stack and subsample must be positive");
}

Tensor positional_encoding(int positions, int d_model) {
  std::vector<double> pe(static_cast<std::size_t>(positions) * d_model);
  for (int pos = 0; pos < positions; ++pos) {
    for (int i = 0; i < d_model / 2; ++i) {
      const double freq = std::pow(10000.0, -2.0 * i / d_model);
      pe[static_cast<std::size_t>(pos) * d_model + 2 * i] = std::sin(pos * freq);
      pe[static_cast<std::size_t>(pos) * d_model + 2 * i + 1] = std::cos(pos * freq);
    }
  }
  return Tensor::from({positions, d_model}, std::move(pe));
}

std::vector<std::uint8_t> causal_mask(int n) {
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(n) * n, 0);
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) mask[static_cast<std::size_t>(i) * n + j] = 1;
  }
  return mask;
}

namespace {

Tensor linear(const Tensor& x, const Linear& l) { return ag::affine(x, l.w, l.b); }

Tensor norm(const Tensor& x, const LayerNormWeights& ln) { return ag::layer_norm(x, ln.gain, ln.bias); }

Tensor feed_forward(const Tensor& x, const Linear& ff1, const Linear& ff2) {
  return linear(ag::relu(linear(x, ff1)), ff2);
}

Tensor attend(const Tensor& queries, const Tensor& keys, const Tensor& values, const Linear& out_proj, int n_heads,
              const std::vector<std::uint8_t>* mask, AttentionTrace* trace, const char* type, int layer) {
  std::vector<double> probs;
  const std::span<const std::uint8_t> m = mask ? std::span<const std::uint8_t>(*mask) : std::span<const std::uint8_t>{};
  const Tensor heads = ag::multi_head_attention(queries, keys, values, n_heads, m, trace ? &probs : nullptr);
  if (trace) {
    const int lq = queries.rows(), lk = keys.rows();
    const std::size_t block = static_cast<std::size_t>(lq) * lk;
    for (int h = 0; h < n_heads; ++h) {
      AttentionMap map;
      map.type = type;
      map.layer = layer;
      map.head = h;
      map.rows = lq;
      map.cols = lk;
      map.weights.assign(probs.begin() + h * block, probs.begin() + (h + 1) * block);
      if (mask) {
        map.mask = *mask;
      } else {
        map.mask.assign(block, 0);
      }
      trace->push_back(std::move(map));
    }
  }
  return linear(heads, out_proj);
}

struct ParamSpec {
  std::string name;
  ag::Shape shape;
  enum Init { uniform_fan_in, uniform_unit, zeros, ones } init;
};

}  // namespace

Model::Model(const ModelConfig& cfg, ModelMode mode, std::uint64_t seed) : cfg_(cfg), mode_(mode) {
  cfg_.validate();
  build_parameters(seed);
  bind_weights();
}

void Model::build_parameters(std::uint64_t seed) {
  const int d = cfg_.d_model;
  std::vector<ParamSpec> specs;
  auto add_linear = [&](const std::string& prefix, int in, int out) {
    specs.push_back({prefix + ".weight", {in, out}, ParamSpec::uniform_fan_in});
    specs.push_back({prefix + ".bias", {1, out}, ParamSpec::zeros});
  };
  auto add_norm = [&](const std::string& prefix) {
    specs.push_back({prefix + ".gain", {1, d}, ParamSpec::ones});
    specs.push_back({prefix + ".bias", {1, d}, ParamSpec::zeros});
  };
  auto add_attention = [&](const std::string& prefix) {
    for (const char* p : {"q", "k", "v", "o"}) add_linear(prefix + "." + p, d, d);
  };

  add_linear("encoder.input_proj", cfg_.input_dim(), d);
  for (int l = 0; l < cfg_.enc_layers; ++l) {
    const std::string p = "encoder.layers." + std::to_string(l);
    add_norm(p + ".ln_attn");
    add_attention(p + ".self_attn");
    add_norm(p + ".ln_ff");
    add_linear(p + ".ff1", d, cfg_.d_ff);
    add_linear(p + ".ff2", cfg_.d_ff, d);
  }
  add_norm("encoder.norm");
  add_linear("accent_head", d, cfg_.n_accents);
  if (cfg_.pooling == Pooling::gru) {
    specs.push_back({"accent_gru.w_ih", {d, 3 * d}, ParamSpec::uniform_fan_in});
    specs.push_back({"accent_gru.w_hh", {d, 3 * d}, ParamSpec::uniform_fan_in});
    specs.push_back({"accent_gru.b_ih", {1, 3 * d}, ParamSpec::zeros});
    specs.push_back({"accent_gru.b_hh", {1, 3 * d}, ParamSpec::zeros});
  }
  specs.push_back({"decoder.embedding", {cfg_.vocab, d}, ParamSpec::uniform_unit});
  for (int l = 0; l < cfg_.dec_layers; ++l) {
    const std::string p = "decoder.layers." + std::to_string(l);
    add_norm(p + ".ln_self");
    add_attention(p + ".self_attn");
    add_norm(p + ".ln_cross");
    add_attention(p + ".cross_attn");
    add_norm(p + ".ln_ff");
    add_linear(p + ".ff1", d, cfg_.d_ff);
    add_linear(p + ".ff2", cfg_.d_ff, d);
  }
  add_norm("decoder.norm");
  add_linear("phoneme_head", d, cfg_.vocab);
  add_linear("error_head", d, 1);

  for (const auto& spec : specs) {
    Tensor t = Tensor::zeros(spec.shape, true);
    auto values = t.mutable_values();
    CounterRng rng(derive_key(seed, spec.name));
    switch (spec.init) {
      case ParamSpec::uniform_fan_in: {
        const double bound = 1.0 / std::sqrt(static_cast<double>(spec.shape[0]));
        for (auto& v : values) v = rng.uniform(-bound, bound);
        break;
      }
      case ParamSpec::uniform_unit:
        for (auto& v : values) v = rng.uniform(-1.0, 1.0);
        break;
      case ParamSpec::zeros: break;
      case ParamSpec::ones: std::fill(values.begin(), values.end(), 1.0); break;
    }
    params_.emplace(spec.name, t);
  }
}

void Model::bind_weights() {
  auto get = [&](const std::string& name) -> Tensor {
    auto it = params_.find(name);
    if (it == params_.end()) throw Error("model parameter '" + name + "' is missing");
    return it->second;
  };
  auto lin = [&](const std::string& p) { return Linear{get(p + ".weight"), get(p + ".bias")}; };
  auto ln = [&](const std::string& p) { return LayerNormWeights{get(p + ".gain"), get(p + ".bias")}; };
  auto attn = [&](const std::string& p) {
    return AttentionWeights{lin(p + ".q"), lin(p + ".k"), lin(p + ".v"), lin(p + ".o")};
  };

  Weights w;
  w.input_proj = lin("encoder.input_proj");
  for (int l = 0; l < cfg_.enc_layers; ++l) {
    const std::string p = "encoder.layers." + std::to_string(l);
    w.encoder.push_back({ln(p + ".ln_attn"), attn(p + ".self_attn"), ln(p + ".ln_ff"), lin(p + ".ff1"), lin(p + ".ff2")});
  }
  w.encoder_norm = ln("encoder.norm");
  w.accent_head = lin("accent_head");
  if (cfg_.pooling == Pooling::gru) {
    w.gru = {get("accent_gru.w_ih"), get("accent_gru.w_hh"), get("accent_gru.b_ih"), get("accent_gru.b_hh")};
  }
  w.embedding = get("decoder.embedding");
  for (int l = 0; l < cfg_.dec_layers; ++l) {
    const std::string p = "decoder.layers." + std::to_string(l);
    w.decoder.push_back({ln(p + ".ln_self"), attn(p + ".self_attn"), ln(p + ".ln_cross"), attn(p + ".cross_attn"),
                         ln(p + ".ln_ff"), lin(p + ".ff1"), lin(p + ".ff2")});
  }
  w.decoder_norm = ln("decoder.norm");
  w.phoneme_head = lin("phoneme_head");
  w.error_head = lin("error_head");
  weights_ = std::move(w);
}

std::vector<Tensor> Model::parameter_list() const {
  std::vector<Tensor> out;
  out.reserve(params_.size());
  for (const auto& [name, t] : params_) out.push_back(t);
  return out;
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : params_) n += t.size();
  return n;
}

namespace {

Tensor meta(double v) { return Tensor::scalar(v); }

int meta_int(const ag::NamedTensors& t, const std::string& key) {
  auto it = t.find("meta." + key);
  if (it == t.end()) throw FormatError("checkpoint is missing 'meta." + key + "'");
  return static_cast<int>(it->second.item());
}

}  // namespace

ag::NamedTensors Model::to_checkpoint() const {
  ag::NamedTensors out;
  for (const auto& [name, t] : params_) out.emplace(name, t.detach());
  out.emplace("meta.enc_layers", meta(cfg_.enc_layers));
  out.emplace("meta.dec_layers", meta(cfg_.dec_layers));
  out.emplace("meta.d_model", meta(cfg_.d_model));
  out.emplace("meta.n_heads", meta(cfg_.n_heads));
  out.emplace("meta.d_ff", meta(cfg_.d_ff));
  out.emplace("meta.vocab", meta(cfg_.vocab));
  out.emplace("meta.n_accents", meta(cfg_.n_accents));
  out.emplace("meta.raw_dim", meta(cfg_.raw_dim));
  out.emplace("meta.stack", meta(cfg_.stack));
  out.emplace("meta.subsample", meta(cfg_.subsample));
  out.emplace("meta.pooling", meta(cfg_.pooling == Pooling::gru ? 1 : 0));
  out.emplace("meta.decoder_mask", meta(cfg_.decoder_mask == DecoderMask::full ? 1 : 0));
  out.emplace("meta.mode", meta(mode_ == ModelMode::conditioned ? 1 : 0));
  return out;
}

Model Model::from_checkpoint(const ag::NamedTensors& tensors) {
  ModelConfig cfg;
  cfg.enc_layers = meta_int(tensors, "enc_layers");
  cfg.dec_layers = meta_int(tensors, "dec_layers");
  cfg.d_model = meta_int(tensors, "d_model");
  cfg.n_heads = meta_int(tensors, "n_heads");
  cfg.d_ff = meta_int(tensors, "d_ff");
  cfg.vocab = meta_int(tensors, "vocab");
  cfg.n_accents = meta_int(tensors, "n_accents");
  cfg.raw_dim = meta_int(tensors, "raw_dim");
  cfg.stack = meta_int(tensors, "stack");
  cfg.subsample = meta_int(tensors, "subsample");
  cfg.pooling = meta_int(tensors, "pooling") ? Pooling::gru : Pooling::global_mean;
  cfg.decoder_mask = meta_int(tensors, "decoder_mask") ? DecoderMask::full : DecoderMask::causal;
  const ModelMode mode = meta_int(tensors, "mode") ? ModelMode::conditioned : ModelMode::asr_baseline;

  Model model(cfg, mode, 0);
  for (auto& [name, param] : model.params_) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw FormatError("checkpoint is missing parameter '" + name + "'");
    if (it->second.shape() != param.shape()) throw FormatError("checkpoint parameter '" + name + "' has the wrong shape");
    std::copy(it->second.values().begin(), it->second.values().end(), param.mutable_values().begin());
  }
  for (const auto& [name, t] : tensors) {
    if (name.rfind("meta.", 0) != 0 && !model.params_.count(name)) {
      throw FormatError("checkpoint holds unexpected parameter '" + name + "'");
    }
  }
  return model;
}

void Model::save(const std::string& path) const { ag::save_checkpoint(to_checkpoint(), path); }

Model Model::load(const std::string& path) { return from_checkpoint(ag::load_checkpoint(path)); }

void Model::copy_parameters_from(const Model& other) {
  if (!(other.cfg_ == cfg_)) throw Error("cannot copy parameters between models with different configurations");
  for (auto& [name, param] : params_) {
    const auto& src = other.params_.at(name);
    std::copy(src.values().begin(), src.values().end(), param.mutable_values().begin());
  }
}

StackedFeatures Model::prepare(const FeatureMatrix& raw) const {
  if (raw.dims() != cfg_.raw_dim) {
    throw Error("feature dimension " + std::to_string(raw.dims()) + " does not match model input dimension " +
                std::to_string(cfg_.raw_dim));
  }
  return stack_subsample(raw, cfg_.stack, cfg_.subsample);
}

EncoderOutput Model::encode(const StackedFeatures& features, AttentionTrace* trace) const {
  if (features.dims() != cfg_.input_dim()) {
    throw Error("stacked feature dimension " + std::to_string(features.dims()) + " does not match expected " +
                std::to_string(cfg_.input_dim()));
  }
  const auto& w = weights_;
  const int frames = features.frames();
  const Tensor input = Tensor::from({frames, features.dims()}, features.values.values());
  Tensor x = ag::add(linear(input, w.input_proj), positional_encoding(frames, cfg_.d_model));
  for (int l = 0; l < cfg_.enc_layers; ++l) {
    const auto& layer = w.encoder[l];
    const Tensor h = norm(x, layer.ln_attn);
    const Tensor q = linear(h, layer.self_attn.q);
    const Tensor k = linear(h, layer.self_attn.k);
    const Tensor v = linear(h, layer.self_attn.v);
    x = ag::add(x, attend(q, k, v, layer.self_attn.o, cfg_.n_heads, nullptr, trace, "enc_self", l));
    x = ag::add(x, feed_forward(norm(x, layer.ln_ff), layer.ff1, layer.ff2));
  }
  const Tensor memory = norm(x, w.encoder_norm);

  Tensor pooled;
  if (cfg_.pooling == Pooling::global_mean) {
    pooled = ag::mean(memory, 0);
  } else {
    const int d = cfg_.d_model;
    const Tensor gates_x = ag::affine(memory, w.gru.w_ih, w.gru.b_ih);
    Tensor h = Tensor::zeros({1, d});
    for (int t = 0; t < frames; ++t) {
      const Tensor gx = ag::slice(gates_x, 0, t, t + 1);
      const Tensor gh = ag::affine(h, w.gru.w_hh, w.gru.b_hh);
      const Tensor r = ag::sigmoid(ag::add(ag::slice(gx, 1, 0, d), ag::slice(gh, 1, 0, d)));
      const Tensor z = ag::sigmoid(ag::add(ag::slice(gx, 1, d, 2 * d), ag::slice(gh, 1, d, 2 * d)));
      const Tensor n = ag::tanh(ag::add(ag::slice(gx, 1, 2 * d, 3 * d), ag::mul(r, ag::slice(gh, 1, 2 * d, 3 * d))));
      // h' = (1 - z) * n + z * h
      h = ag::add(n, ag::mul(z, ag::sub(h, n)));
    }
    pooled = h;
  }
  return {memory, linear(pooled, w.accent_head)};
}

Model::CrossCache Model::cross_cache(const Tensor& memory) const {
  CrossCache cache;
  for (const auto& layer : weights_.decoder) {
    cache.keys.push_back(linear(memory, layer.cross_attn.k));
    cache.values.push_back(linear(memory, layer.cross_attn.v));
  }
  return cache;
}

Tensor Model::run_decoder(std::span<const int> input_ids, const CrossCache& cache, bool causal,
                          AttentionTrace* trace) const {
  const auto& w = weights_;
  const int n = static_cast<int>(input_ids.size());
  const auto mask = causal ? causal_mask(n) : std::vector<std::uint8_t>{};
  Tensor y = ag::add(ag::embedding_lookup(w.embedding, input_ids), positional_encoding(n, cfg_.d_model));
  for (int l = 0; l < cfg_.dec_layers; ++l) {
    const auto& layer = w.decoder[l];
    const Tensor h = norm(y, layer.ln_self);
    const Tensor q = linear(h, layer.self_attn.q);
    const Tensor k = linear(h, layer.self_attn.k);
    const Tensor v = linear(h, layer.self_attn.v);
    y = ag::add(y, attend(q, k, v, layer.self_attn.o, cfg_.n_heads, causal ? &mask : nullptr, trace, "dec_self", l));
    const Tensor qc = linear(norm(y, layer.ln_cross), layer.cross_attn.q);
    y = ag::add(y, attend(qc, cache.keys[l], cache.values[l], layer.cross_attn.o, cfg_.n_heads, nullptr, trace,
                          "dec_cross", l));
    y = ag::add(y, feed_forward(norm(y, layer.ln_ff), layer.ff1, layer.ff2));
  }
  return norm(y, w.decoder_norm);
}

ConditionedOutput Model::decode_conditioned(const Tensor& memory, std::span<const int> target, AttentionTrace* trace,
                                            PassCounter* counter) const {
  if (target.empty()) throw Error("decode_conditioned: empty target sequence");
  std::vector<int> input{kSos};
  for (int t : target) {
    if (t < 0 || t >= kNumPhonemes) throw Error("decode_conditioned: target contains a non-phoneme index");
    input.push_back(t);
  }
  const Tensor hidden = run_decoder(input, cross_cache(memory), cfg_.decoder_mask == DecoderMask::causal, trace);
  if (counter) ++counter->decoder_passes;
  ConditionedOutput out;
  out.phoneme_logits = linear(hidden, weights_.phoneme_head);
  out.error_logits = linear(hidden, weights_.error_head);
  out.error_probs = ag::sigmoid(out.error_logits);
  return out;
}

Tensor Model::decode_asr_teacher_forced(const Tensor& memory, std::span<const int> canonical, AttentionTrace* trace,
                                        PassCounter* counter) const {
  if (canonical.empty()) throw Error("decode_asr_teacher_forced: empty canonical sequence");
  std::vector<int> input{kSos};
  for (int c : canonical) {
    if (c < 0 || c >= kNumPhonemes) throw Error("decode_asr_teacher_forced: canonical contains a non-phoneme index");
    input.push_back(c);
  }
  const Tensor hidden = run_decoder(input, cross_cache(memory), true, trace);
  if (counter) ++counter->decoder_passes;
  return linear(hidden, weights_.phoneme_head);
}

PhonemeSequence Model::decode_asr_autoregressive(const Tensor& memory, int max_len, PassCounter* counter) const {
  if (max_len < 1) throw Error("decode_asr_autoregressive: max_len must be >= 1");
  ag::NoGradGuard no_grad;
  const CrossCache cache = cross_cache(memory);
  std::vector<int> input{kSos};
  PhonemeSequence out;
  out.kind = SequenceKind::recognized;
  while (static_cast<int>(out.ids.size()) < max_len) {
    const Tensor hidden = run_decoder(input, cache, true, nullptr);
    if (counter) ++counter->decoder_passes;
    const Tensor last = ag::slice(hidden, 0, hidden.rows() - 1, hidden.rows());
    const Tensor row = linear(last, weights_.phoneme_head);
    const auto logits = row.values();
    int best = kEos;
    for (int c = 0; c < kNumPhonemes; ++c) {
      if (logits[c] > logits[best]) best = c;
    }
    if (best == kEos) break;
    out.ids.push_back(best);
    input.push_back(best);
  }
  return out;
}

ErrorStates Model::baseline_aped(const StackedFeatures& features, const PhonemeSequence& target,
                                 const AlignCosts& costs, int max_len, PassCounter* counter,
                                 PhonemeSequence* recognized) const {
  validate(target);
  ag::NoGradGuard no_grad;
  const auto enc = encode(features);
  if (counter) ++counter->encoder_passes;
  const int limit = max_len > 0 ? max_len : 2 * target.size();
  PhonemeSequence rec = decode_asr_autoregressive(enc.memory, limit, counter);
  const auto labels = derive_labels(nw_align(rec, target, costs));
  if (recognized) *recognized = std::move(rec);
  return labels.error_states;
}

std::vector<double> Model::predict_error_probs(const StackedFeatures& features, const PhonemeSequence& target,
                                               PassCounter* counter, std::vector<double>* accent_probs) const {
  validate(target);
  ag::NoGradGuard no_grad;
  const auto enc = encode(features);
  if (counter) ++counter->encoder_passes;
  const auto out = decode_conditioned(enc.memory, target.view(), nullptr, counter);
  if (accent_probs) {
    const Tensor p = ag::softmax(enc.accent_logits, 1);
    accent_probs->assign(p.values().begin(), p.values().end());
  }
  const auto probs = out.error_probs.values();
  // Row 0 is the <sos> slot; rows 1..k belong to the target phonemes.
  return std::vector<double>(probs.begin() + 1, probs.end());
}

AttentionTrace Model::dump_attention(const StackedFeatures& features, const PhonemeSequence& decoder_text) const {
  ag::NoGradGuard no_grad;
  AttentionTrace trace;
  const auto enc = encode(features, &trace);
  if (mode_ == ModelMode::conditioned) {
    decode_conditioned(enc.memory, decoder_text.view(), &trace);
  } else {
    decode_asr_teacher_forced(enc.memory, decoder_text.view(), &trace);
  }
  return trace;
}

}  // namespace aped
