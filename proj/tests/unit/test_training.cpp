#include <doctest.h>

#include <algorithm>
#include <numeric>

#include "aped/error.hpp"
#include "aped/training.hpp"
#include "support/corpus.hpp"
#include "support/oracles.hpp"

using namespace aped;

namespace {

TrainConfig quick(Stage stage, int epochs) {
  TrainConfig cfg = stage == Stage::pretrain_asr ? TrainConfig::pretrain_preset() : TrainConfig::adapt_preset();
  cfg.epochs = epochs;
  cfg.model = fixture::small_config();
  return cfg;
}

const Corpus& small_corpus() {
  static const Corpus corpus = load_corpus(fixture::small_manifest(), fixture::small_config());
  return corpus;
}

std::vector<char> checkpoint_bytes(const Model& m) { return ag::serialize_checkpoint(m.to_checkpoint()); }

}  // namespace

TEST_CASE("stage presets") {
  const auto pre = TrainConfig::pretrain_preset();
  CHECK(pre.stage == Stage::pretrain_asr);
  CHECK(pre.lr == 1e-3);
  CHECK(pre.weights.alpha == 0.7);
  CHECK(pre.weights.beta == 0.0);
  const auto ad = TrainConfig::adapt_preset();
  CHECK(ad.stage == Stage::adapt_aped);
  CHECK(ad.lr == 1e-4);
  CHECK(ad.weights.alpha == 0.1);
  CHECK(ad.weights.beta == 0.3);
  CHECK(ad.weights.gamma == 0.5);
  CHECK(ad.weights.eval_kind == EvalLossKind::focal);
}

TEST_CASE("config text parsing") {
  const auto cfg = TrainConfig::parse("stage = adapt_aped  # comment\n\nlr=3e-4\nmodel.d_model=32\neval_kind=bce\n");
  CHECK(cfg.stage == Stage::adapt_aped);
  CHECK(cfg.lr == 3e-4);
  CHECK(cfg.weights.alpha == 0.1);
  CHECK(cfg.model.d_model == 32);
  CHECK(cfg.weights.eval_kind == EvalLossKind::bce);
  CHECK(TrainConfig::parse("model.preset=large").model == ModelConfig::large());
  CHECK_THROWS_AS(TrainConfig::parse("learning_rate=1"), Error);
  CHECK_THROWS_AS(TrainConfig::parse("lr=1\nlr=2"), Error);
  CHECK_THROWS_AS(TrainConfig::parse("epochs=ten"), Error);
  CHECK_THROWS_AS(TrainConfig::parse("epochs=0"), Error);
  CHECK_THROWS_AS(TrainConfig::parse("stage=finetune"), Error);
  CHECK_THROWS_AS(TrainConfig::parse("no equals sign"), Error);
}

TEST_CASE("config text round trip") {
  auto cfg = TrainConfig::adapt_preset();
  cfg.lr = 0.1 + 0.2;
  cfg.model.pooling = Pooling::gru;
  cfg.data = "corpus/manifest.jsonl";
  cfg.init_checkpoint = "pre.ckpt";
  const auto back = TrainConfig::parse(cfg.to_text());
  CHECK(back.to_text() == cfg.to_text());
  CHECK(back.lr == cfg.lr);
  CHECK(back.model == cfg.model);
}

TEST_CASE("corpus loading respects the split") {
  const auto& corpus = small_corpus();
  CHECK(corpus.train.size() == 160);
  CHECK(corpus.val.size() == 20);
  CHECK(corpus.test.size() == 20);
  const auto& ex = corpus.train.front();
  CHECK(ex.features.dims() == kRawFeatureDim * 3);
  CHECK(ex.labels.error_states.size() == ex.target.ids.size());
}

TEST_CASE("pretraining lowers the loss and is deterministic") {
  const auto cfg = quick(Stage::pretrain_asr, 5);
  const auto a = pretrain_asr(cfg, small_corpus());
  REQUIRE(a.log.rows.size() == 5);
  CHECK(a.log.rows.back().loss < a.log.rows.front().loss);
  CHECK(a.log.val_metric_name == "per");
  const auto b = pretrain_asr(cfg, small_corpus());
  CHECK(checkpoint_bytes(a.model) == checkpoint_bytes(b.model));
  CHECK(a.log.to_csv() == b.log.to_csv());
  const auto best = std::min_element(a.log.rows.begin(), a.log.rows.end(),
                                     [](const EpochLog& x, const EpochLog& y) { return x.val_metric < y.val_metric; });
  CHECK(a.best_epoch == best->epoch);
  CHECK(a.best_metric == doctest::Approx(teacher_forced_per(a.model, small_corpus().val)).epsilon(1e-12));
}

TEST_CASE("alpha zero leaves the accent head untouched") {
  auto cfg = quick(Stage::pretrain_asr, 2);
  cfg.weights.alpha = 0.0;
  const Model init(cfg.model, ModelMode::asr_baseline, cfg.seed);
  const auto r = pretrain_asr(cfg, small_corpus(), &init);
  for (const char* name : {"accent_head.weight", "accent_head.bias"}) {
    const auto before = init.parameters().at(name).values();
    const auto after = r.model.parameters().at(name).values();
    CHECK(std::equal(before.begin(), before.end(), after.begin(), after.end()));
  }
  const auto moved = r.model.parameters().at("phoneme_head.weight").values();
  const auto start = init.parameters().at("phoneme_head.weight").values();
  CHECK_FALSE(std::equal(moved.begin(), moved.end(), start.begin(), start.end()));
}

TEST_CASE("a single batch can be memorised") {
  Corpus one;
  one.train.assign(small_corpus().train.begin(), small_corpus().train.begin() + 8);
  one.val = one.train;
  auto cfg = quick(Stage::pretrain_asr, 400);
  cfg.batch_size = 8;
  cfg.lr = 3e-3;
  const auto r = pretrain_asr(cfg, one);
  CHECK(r.log.rows.back().asr < 0.01);
  CHECK(r.best_metric == 0.0);
}

TEST_CASE("adaptation trains the error head and keeps the best F1") {
  const auto pre = pretrain_asr(quick(Stage::pretrain_asr, 3), small_corpus());
  auto cfg = quick(Stage::adapt_aped, 3);
  cfg.lr = 1e-3;
  const auto r = adapt_aped(cfg, small_corpus(), pre.model);
  CHECK(r.model.mode() == ModelMode::conditioned);
  CHECK(r.log.val_metric_name == "f1");
  CHECK(r.log.rows.back().eval < r.log.rows.front().eval);
  double best = 0;
  for (const auto& row : r.log.rows) best = std::max(best, row.val_metric);
  CHECK(r.best_metric == best);
  CHECK(evaluate(r.model, small_corpus().val).report.f1 == doctest::Approx(best).epsilon(1e-12));

  auto other = fixture::small_config();
  other.d_ff = 48;
  const Model wrong(other, ModelMode::asr_baseline, 1);
  CHECK_THROWS_WITH_AS(adapt_aped(cfg, small_corpus(), wrong), doctest::Contains("incompatible checkpoint"), Error);
}

TEST_CASE("evaluation pools counts over the split") {
  const Model m(fixture::small_config(), ModelMode::conditioned, 4);
  const auto& test = small_corpus().test;
  const auto r = evaluate(m, test);
  std::int64_t positions = 0;
  for (const auto& ex : test) positions += ex.target.size();
  const auto& c = r.report.counts;
  CHECK(c.ta + c.fr + c.fa + c.tr == positions);
  REQUIRE(r.rows.size() == test.size());
  std::vector<int> all_pred, all_truth;
  for (const auto& row : r.rows) {
    CHECK(row.predicted == binarize(row.probs));
    all_pred.insert(all_pred.end(), row.predicted.begin(), row.predicted.end());
    all_truth.insert(all_truth.end(), row.states.begin(), row.states.end());
  }
  const auto ref = oracle::reference_metrics(all_pred, all_truth);
  CHECK(r.report.f1 == doctest::Approx(ref.f1).epsilon(1e-12));
  CHECK(r.rows_csv().rfind("id,k,errors,error_rate,tr,fr,fa,ta,accent,accent_predicted\n", 0) == 0);

  const auto base = evaluate(m, test, kDefaultTheta, ModelMode::asr_baseline);
  for (const auto& row : base.rows) {
    for (double p : row.probs) CHECK((p == 0.0 || p == 1.0));
  }
}

TEST_CASE("all-reject F1 matches the oracle") {
  const auto& test = small_corpus().test;
  std::vector<int> pred, truth;
  for (const auto& ex : test) {
    truth.insert(truth.end(), ex.labels.error_states.begin(), ex.labels.error_states.end());
    pred.insert(pred.end(), ex.labels.error_states.size(), 1);
  }
  CHECK(all_reject_f1(test) == doctest::Approx(oracle::reference_metrics(pred, truth).f1).epsilon(1e-12));
}

TEST_CASE("perfect scores give an F1 of one") {
  std::vector<UtteranceEval> rows;
  for (const auto& ex : small_corpus().test) {
    UtteranceEval u;
    u.states = ex.labels.error_states;
    u.probs.assign(u.states.begin(), u.states.end());
    u.predicted = u.states;
    rows.push_back(u);
  }
  std::vector<UtterancePrediction> preds;
  for (const auto& u : rows) preds.push_back({u.probs, u.states});
  const std::vector<double> theta{0.5};
  CHECK(theta_sweep(preds, theta).front().f1 == 1.0);
}

TEST_CASE("error-rate breakdown partitions the utterances") {
  std::vector<UtteranceEval> rows;
  for (int i = 0; i < 40; ++i) {
    UtteranceEval u;
    u.id = std::to_string(i);
    u.states.assign(10, 0);
    for (int j = 0; j < i % 8; ++j) u.states[j] = 1;
    u.predicted = u.states;
    u.predicted[9] = 1;
    u.probs.assign(u.predicted.begin(), u.predicted.end());
    u.error_rate = (i % 8) / 10.0;
    rows.push_back(u);
  }
  const auto buckets = breakdown_by_error_rate(rows, 4);
  REQUIRE(buckets.size() == 4);
  int total = 0;
  std::int64_t positions = 0;
  for (std::size_t b = 0; b < buckets.size(); ++b) {
    total += buckets[b].utterances;
    const auto& c = buckets[b].report.counts;
    positions += c.ta + c.fr + c.fa + c.tr;
    if (b) CHECK(buckets[b].lower == buckets[b - 1].upper);
  }
  CHECK(total == 40);
  CHECK(positions == 400);
  CHECK(buckets.back().upper == 0.7);
  CHECK(breakdown_csv(buckets).rfind("quantile,lower,upper,utterances,precision,recall,f1,far,frr,degenerate\n", 0) == 0);

  std::vector<UtteranceEval> flat(rows.begin(), rows.begin() + 1);
  CHECK_THROWS_AS(breakdown_by_error_rate(flat, 4), Error);
}
