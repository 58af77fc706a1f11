#pragma once

#include <filesystem>
#include <string>

#include "aped/synthdata.hpp"
#include "aped/training.hpp"
#include "support/fixtures.hpp"

namespace aped::fixture {

/// Small corpus written once per process under the temp directory.
inline const Manifest& small_manifest(int n_utts = 200) {
  static const Manifest manifest = [n_utts] {
    CorpusConfig cfg;
    cfg.n_utts = n_utts;
    cfg.min_len = 6;
    cfg.max_len = 10;
    cfg.seed = 3;
    const auto dir = std::filesystem::temp_directory_path() / ("aped_test_corpus_" + std::to_string(n_utts));
    std::filesystem::remove_all(dir);
    return generate_corpus(cfg, dir);
  }();
  return manifest;
}

inline ModelConfig small_config() {
  auto cfg = tiny_config();
  cfg.d_model = 16;
  cfg.n_heads = 2;
  cfg.d_ff = 32;
  cfg.stack = 3;
  return cfg;
}

}  // namespace aped::fixture
