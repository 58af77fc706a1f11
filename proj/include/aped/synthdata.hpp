#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "aped/alignment.hpp"
#include "aped/features.hpp"
#include "aped/phoneme.hpp"
#include "aped/rng.hpp"

namespace aped {

/// Per-phoneme corruption of a target sequence into what a learner said.
/// The default error rate is the mispronounced-segment share of L2-Arctic.
struct CorruptionConfig {
  double p_error = 0.1456;
  double substitution = 0.70;
  double deletion = 0.20;
  double insertion = 0.10;
  std::uint64_t rng_seed = 1;

  void validate() const;
};

/// Stand-in acoustics: every phoneme has a fixed 39-dim prototype, every
/// accent a fixed bias direction. Durations of 6 to 10 frames match
/// 60 to 100 ms phones at a 10 ms hop.
struct RenderConfig {
  std::uint64_t prototype_seed = 7;
  int min_frames = 6;
  int max_frames = 10;
  double noise_sigma = 0.3;
  double accent_shift_scale = 3.0;

  void validate() const;
};

/// Prototype table derived once from RenderConfig::prototype_seed.
/// Phoneme prototypes are i.i.d. standard normal; accent biases are
/// Gram-Schmidt-orthonormalised random directions times accent_shift_scale.
class AcousticPrototypes {
 public:
  explicit AcousticPrototypes(const RenderConfig& cfg);

  std::span<const double> phoneme(int id) const;
  std::span<const double> accent(int id) const;

 private:
  std::vector<double> phonemes_;  // kNumPhonemes x kRawFeatureDim
  std::vector<double> accents_;   // kNumAccents x kRawFeatureDim
};

/// Each target position independently errs with p_error; the operation is
/// drawn from the (substitution, deletion, insertion) mix. A draw that would
/// leave the sequence empty is repeated.
PhonemeSequence corrupt(const PhonemeSequence& target, const CorruptionConfig& cfg, CounterRng& rng);

FeatureMatrix render_features(const PhonemeSequence& canonical, AccentLabel accent,
                              const AcousticPrototypes& prototypes, const RenderConfig& cfg,
                              CounterRng& rng);
FeatureMatrix render_features(const PhonemeSequence& canonical, AccentLabel accent, const RenderConfig& cfg,
                              CounterRng& rng);

enum class Split { train, val, test };

const char* to_string(Split split);
Split parse_split(std::string_view text);

struct SplitRatios {
  int train = 8;
  int val = 1;
  int test = 1;
};

/// Records are grouped in consecutive blocks of (train+val+test) indices and
/// each block is shuffled by a hash of its block number, so every full block
/// holds exactly the configured ratio.
Split assign_split(std::size_t record_index, const SplitRatios& ratios = {});

std::string record_id(std::size_t index);

struct ManifestRecord {
  std::string id;
  AccentLabel accent;
  PhonemeSequence target;
  PhonemeSequence canonical;
  ApedLabels labels;
  std::string feature_path;  // relative to the manifest directory
  Split split = Split::train;
};

struct Manifest {
  std::vector<ManifestRecord> records;
  std::filesystem::path base_dir;

  std::vector<const ManifestRecord*> select(Split split) const;
  const ManifestRecord* find(std::string_view id) const;
  std::filesystem::path feature_file(const ManifestRecord& record) const { return base_dir / record.feature_path; }
};

inline constexpr const char* kManifestName = "manifest.jsonl";

/// One JSON object per line with keys id, accent, target, canonical,
/// error_states, aligned_canonical, asr_mask, feature_path, split.
void write_manifest(const Manifest& manifest, const std::filesystem::path& path);

/// Validates every record and that each feature file exists.
Manifest read_manifest(const std::filesystem::path& path);

struct CorpusConfig {
  int n_utts = 2000;
  int min_len = 20;
  int max_len = 40;
  int n_accents = kNumAccents;
  std::uint64_t seed = 1;
  CorruptionConfig corruption;
  RenderConfig render;
  SplitRatios ratios;
  AlignCosts costs;
};

/// Writes features/<id>.feat and manifest.jsonl under out_dir. Record i draws
/// all of its randomness from keys derived from (seed, i).
Manifest generate_corpus(const CorpusConfig& cfg, const std::filesystem::path& out_dir);

}  // namespace aped
