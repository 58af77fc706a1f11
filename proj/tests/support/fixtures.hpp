#pragma once

#include <vector>

#include "aped/alignment.hpp"
#include "aped/features.hpp"
#include "aped/model.hpp"
#include "aped/rng.hpp"

namespace aped::fixture {

inline ModelConfig tiny_config(Pooling pooling = Pooling::global_mean) {
  ModelConfig cfg;
  cfg.enc_layers = 1;
  cfg.dec_layers = 1;
  cfg.d_model = 8;
  cfg.n_heads = 2;
  cfg.d_ff = 16;
  cfg.stack = 2;
  cfg.subsample = 2;
  cfg.pooling = pooling;
  return cfg;
}

inline FeatureMatrix random_features(std::uint64_t seed, int frames) {
  CounterRng rng(seed);
  FeatureMatrix m(frames, kRawFeatureDim);
  for (int t = 0; t < frames; ++t)
    for (int d = 0; d < kRawFeatureDim; ++d) m.at(t, d) = rng.normal();
  return m;
}

inline PhonemeSequence random_sequence(std::uint64_t seed, int length, SequenceKind kind) {
  CounterRng rng(seed);
  PhonemeSequence s{{}, kind};
  for (int i = 0; i < length; ++i) s.ids.push_back(static_cast<int>(rng.below(kNumPhonemes)));
  return s;
}

}  // namespace aped::fixture
