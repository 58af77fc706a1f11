#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "aped/losses.hpp"
#include "aped/metrics.hpp"
#include "aped/model.hpp"
#include "aped/synthdata.hpp"

namespace aped {

/// One utterance with features already stacked for a model configuration.
struct Example {
  std::string id;
  AccentLabel accent;
  PhonemeSequence target;
  PhonemeSequence canonical;
  ApedLabels labels;
  StackedFeatures features;
};

struct Corpus {
  std::vector<Example> train;
  std::vector<Example> val;
  std::vector<Example> test;

  const std::vector<Example>& split(Split s) const;
};

std::vector<Example> load_examples(const Manifest& manifest, Split split, const ModelConfig& model);
Corpus load_corpus(const Manifest& manifest, const ModelConfig& model);

enum class Stage { pretrain_asr, adapt_aped };

const char* to_string(Stage s);
Stage parse_stage(std::string_view text);

struct TrainConfig {
  Stage stage = Stage::pretrain_asr;
  int epochs = 30;
  double lr = 1e-3;
  int batch_size = 16;
  LossWeights weights;
  std::uint64_t seed = 1;
  ModelConfig model;
  std::string data;             // manifest path
  std::string init_checkpoint;  // required for adapt_aped
  std::string out_checkpoint;
  std::string log;
  double grad_clip = 5.0;       // <= 0 disables clipping

  /// lr 1e-3, alpha 0.7.
  static TrainConfig pretrain_preset();
  /// lr 1e-4, alpha 0.1, beta 0.3, focal with gamma 0.5.
  static TrainConfig adapt_preset();

  void validate() const;

  /// Flat key=value text. Keys absent from the text keep the stage preset;
  /// unknown keys are rejected.
  static TrainConfig parse(std::string_view text);
  static TrainConfig load(const std::filesystem::path& path);
  std::string to_text() const;
};

struct EpochLog {
  int epoch = 0;
  double loss = 0.0;
  double asr = 0.0;
  double accent = 0.0;
  double eval = 0.0;
  double val_metric = 0.0;
  double wall_seconds = 0.0;
};

struct TrainLog {
  std::string val_metric_name;  // "per" or "f1"
  std::vector<EpochLog> rows;

  /// Delimited text. Wall time is left out so that reruns are byte-identical.
  std::string to_csv() const;
};

struct TrainResult {
  Model model;
  TrainLog log;
  int best_epoch = 0;
  double best_metric = 0.0;
};

using EpochCallback = std::function<void(const EpochLog&)>;

/// Teacher-forced ASR training on canonical phonemes with the accent
/// auxiliary loss (l_asr + alpha * l_a). Keeps the epoch with the lowest
/// validation PER. With `init`, training continues from its parameters.
TrainResult pretrain_asr(const TrainConfig& cfg, const Corpus& corpus, const Model* init = nullptr,
                         const EpochCallback& on_epoch = {});

/// Text-conditioned APED training (l_eval + beta * l_asr + alpha * l_a) from
/// an ASR-pretrained model. Keeps the epoch with the best validation F1 at
/// theta = 0.5.
TrainResult adapt_aped(const TrainConfig& cfg, const Corpus& corpus, const Model& init,
                       const EpochCallback& on_epoch = {});

/// File-driven variants: read cfg.data (and cfg.init_checkpoint), write
/// cfg.out_checkpoint and cfg.log when set.
TrainResult pretrain_asr(const TrainConfig& cfg, const EpochCallback& on_epoch = {});
TrainResult adapt_aped(const TrainConfig& cfg, const EpochCallback& on_epoch = {});

/// Teacher-forced greedy PER pooled over a split (total edits / total
/// reference length).
double teacher_forced_per(const Model& model, const std::vector<Example>& examples);

struct UtteranceEval {
  std::string id;
  std::vector<double> probs;  // k soft scores (0/1 for the baseline)
  std::vector<int> predicted;
  std::vector<int> states;
  double error_rate = 0.0;    // fraction of mispronounced target positions
  int accent = 0;
  int accent_predicted = 0;
  std::string recognized;     // baseline mode only
};

struct EvalResult {
  MetricsReport report;
  double accent_accuracy = 0.0;
  std::vector<UtteranceEval> rows;

  std::vector<UtterancePrediction> predictions() const;
  /// id,k,errors,error_rate,tr,fr,fa,ta,accent,accent_predicted
  std::string rows_csv() const;
};

/// Conditioned mode runs one forward pass per utterance; asr_baseline mode
/// recognises autoregressively and aligns against the target.
EvalResult evaluate(const Model& model, const std::vector<Example>& examples, double theta = kDefaultTheta,
                    std::optional<ModelMode> mode = std::nullopt);

struct BucketReport {
  int index = 0;
  double lower = 0.0;  // exclusive, except for the first bucket
  double upper = 0.0;  // inclusive
  int utterances = 0;
  MetricsReport report;
};

/// Buckets utterances by quantiles of their label error rate and reports
/// pooled metrics per bucket. Throws when a bucket is empty.
std::vector<BucketReport> breakdown_by_error_rate(const std::vector<UtteranceEval>& rows, int quantiles = 4);

std::string breakdown_csv(const std::vector<BucketReport>& buckets);

/// F1 of the predictor that rejects every position: recall 1, precision =
/// share of mispronounced positions.
double all_reject_f1(const std::vector<Example>& examples);

}  // namespace aped
