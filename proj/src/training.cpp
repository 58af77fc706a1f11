#include "aped/training.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "aped/error.hpp"
#include "aped/rng.hpp"

namespace aped {

using ag::Tensor;

const std::vector<Example>& Corpus::split(Split s) const {
  switch (s) {
    case Split::train: return train;
    case Split::val: return val;
    case Split::test: return test;
  }
  return train;
}

std::vector<Example> load_examples(const Manifest& manifest, Split split, const ModelConfig& model) {
  std::vector<Example> out;
  for (const auto* r : manifest.select(split)) {
    const auto raw = read_feature_file(manifest.feature_file(*r));
    if (raw.dims() != model.raw_dim) {
      throw Error(r->id + ": feature dimension " + std::to_string(raw.dims()) + " differs from model raw_dim " +
                  std::to_string(model.raw_dim));
    }
    out.push_back({r->id, r->accent, r->target, r->canonical, r->labels,
                   stack_subsample(raw, model.stack, model.subsample)});
  }
  return out;
}

Corpus load_corpus(const Manifest& manifest, const ModelConfig& model) {
  return {load_examples(manifest, Split::train, model), load_examples(manifest, Split::val, model),
          load_examples(manifest, Split::test, model)};
}

const char* to_string(Stage s) { return s == Stage::adapt_aped ? "adapt_aped" : "pretrain_asr"; }

Stage parse_stage(std::string_view text) {
  if (text == "pretrain_asr" || text == "pretrain") return Stage::pretrain_asr;
  if (text == "adapt_aped" || text == "adapt") return Stage::adapt_aped;
  throw Error("unknown stage '" + std::string(text) + "' (expected pretrain_asr or adapt_aped)");
}

// ---- configuration ---------------------------------------------------------

TrainConfig TrainConfig::pretrain_preset() {
  TrainConfig cfg;
  cfg.stage = Stage::pretrain_asr;
  cfg.lr = 1e-3;
  cfg.weights.alpha = 0.7;
  cfg.weights.beta = 0.0;
  return cfg;
}

TrainConfig TrainConfig::adapt_preset() {
  TrainConfig cfg;
  cfg.stage = Stage::adapt_aped;
  cfg.lr = 1e-4;
  cfg.weights.alpha = 0.1;
  cfg.weights.beta = 0.3;
  cfg.weights.gamma = 0.5;
  cfg.weights.eval_kind = EvalLossKind::focal;
  return cfg;
}

void TrainConfig::validate() const {
  if (epochs < 1) throw Error("epochs must be >= 1");
  if (!(lr > 0.0)) throw Error("lr must be > 0");
  if (batch_size < 1) throw Error("batch_size must be >= 1");
  weights.validate();
  model.validate();
}

namespace {

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

int to_int(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  int out = 0;
  try {
    out = std::stoi(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || v.empty()) throw Error("config key '" + key + "' expects an integer, got '" + v + "'");
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double out = 0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || v.empty()) throw Error("config key '" + key + "' expects a number, got '" + v + "'");
  return out;
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

TrainConfig TrainConfig::parse(std::string_view text) {
  std::map<std::string, std::string> kv;
  std::istringstream in{std::string(text)};
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    const std::string t = trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw Error("config line " + std::to_string(line_no) + ": expected key=value");
    const std::string key = trim(std::string_view(t).substr(0, eq));
    const std::string value = trim(std::string_view(t).substr(eq + 1));
    if (!kv.emplace(key, value).second) throw Error("config key '" + key + "' appears twice");
  }

  Stage stage = Stage::pretrain_asr;
  if (auto it = kv.find("stage"); it != kv.end()) stage = parse_stage(it->second);
  TrainConfig cfg = stage == Stage::pretrain_asr ? pretrain_preset() : adapt_preset();

  if (auto it = kv.find("model.preset"); it != kv.end()) {
    if (it->second == "desk") cfg.model = ModelConfig::desk();
    else if (it->second == "large") cfg.model = ModelConfig::large();
    else throw Error("unknown model preset '" + it->second + "' (expected desk or large)");
  }
  for (const auto& [key, v] : kv) {
    if (key == "stage" || key == "model.preset") continue;
    else if (key == "epochs") cfg.epochs = to_int(key, v);
    else if (key == "lr") cfg.lr = to_double(key, v);
    else if (key == "batch_size") cfg.batch_size = to_int(key, v);
    else if (key == "alpha") cfg.weights.alpha = to_double(key, v);
    else if (key == "beta") cfg.weights.beta = to_double(key, v);
    else if (key == "gamma") cfg.weights.gamma = to_double(key, v);
    else if (key == "eval_kind") cfg.weights.eval_kind = parse_eval_loss(v);
    else if (key == "seed") cfg.seed = static_cast<std::uint64_t>(std::stoull(v));
    else if (key == "grad_clip") cfg.grad_clip = to_double(key, v);
    else if (key == "data") cfg.data = v;
    else if (key == "init_checkpoint") cfg.init_checkpoint = v;
    else if (key == "out_checkpoint") cfg.out_checkpoint = v;
    else if (key == "log") cfg.log = v;
    else if (key == "model.enc_layers") cfg.model.enc_layers = to_int(key, v);
    else if (key == "model.dec_layers") cfg.model.dec_layers = to_int(key, v);
    else if (key == "model.d_model") cfg.model.d_model = to_int(key, v);
    else if (key == "model.n_heads") cfg.model.n_heads = to_int(key, v);
    else if (key == "model.d_ff") cfg.model.d_ff = to_int(key, v);
    else if (key == "model.stack") cfg.model.stack = to_int(key, v);
    else if (key == "model.subsample") cfg.model.subsample = to_int(key, v);
    else if (key == "model.pooling") cfg.model.pooling = parse_pooling(v);
    else if (key == "model.decoder_mask") cfg.model.decoder_mask = parse_decoder_mask(v);
    else throw Error("unknown config key '" + key + "'");
  }
  cfg.validate();
  return cfg;
}

TrainConfig TrainConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::string TrainConfig::to_text() const {
  std::ostringstream out;
  out << "stage=" << to_string(stage) << '\n'
      << "epochs=" << epochs << '\n'
      << "lr=" << fmt_double(lr) << '\n'
      << "batch_size=" << batch_size << '\n'
      << "alpha=" << fmt_double(weights.alpha) << '\n'
      << "beta=" << fmt_double(weights.beta) << '\n'
      << "gamma=" << fmt_double(weights.gamma) << '\n'
      << "eval_kind=" << to_string(weights.eval_kind) << '\n'
      << "seed=" << seed << '\n'
      << "grad_clip=" << fmt_double(grad_clip) << '\n'
      << "model.enc_layers=" << model.enc_layers << '\n'
      << "model.dec_layers=" << model.dec_layers << '\n'
      << "model.d_model=" << model.d_model << '\n'
      << "model.n_heads=" << model.n_heads << '\n'
      << "model.d_ff=" << model.d_ff << '\n'
      << "model.stack=" << model.stack << '\n'
      << "model.subsample=" << model.subsample << '\n'
      << "model.pooling=" << to_string(model.pooling) << '\n'
      << "model.decoder_mask=" << to_string(model.decoder_mask) << '\n'
      << "data=" << data << '\n'
      << "init_checkpoint=" << init_checkpoint << '\n'
      << "out_checkpoint=" << out_checkpoint << '\n'
      << "log=" << log << '\n';
  return out.str();
}

std::string TrainLog::to_csv() const {
  std::ostringstream out;
  out << "epoch,loss,asr,accent,eval,val_" << val_metric_name << '\n';
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%d,%.8f,%.8f,%.8f,%.8f,%.8f\n", r.epoch, r.loss, r.asr, r.accent, r.eval,
                  r.val_metric);
    out << buf;
  }
  return out.str();
}

// ---- training loops --------------------------------------------------------

namespace {

using Clock = std::chrono::steady_clock;

std::vector<int> asr_labels(std::span<const int> canonical) {
  std::vector<int> labels(canonical.begin(), canonical.end());
  labels.push_back(kEos);
  return labels;
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  CounterRng rng(derive_key(seed, "shuffle", static_cast<std::uint64_t>(epoch)));
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  return order;
}

struct StepLosses {
  Tensor total;
  double asr = 0.0;
  double accent = 0.0;
  double eval = 0.0;
};

using LossFn = std::function<StepLosses(const Model&, const Example&)>;

ag::NamedTensors snapshot(const Model& model) {
  ag::NamedTensors out;
  for (const auto& [name, t] : model.parameters()) out.emplace(name, t.detach());
  return out;
}

void restore(Model& model, const ag::NamedTensors& snap) {
  for (const auto& [name, t] : model.parameters()) {
    Tensor dst = t;
    const auto src = snap.at(name).values();
    std::copy(src.begin(), src.end(), dst.mutable_values().begin());
  }
}

// Runs cfg.epochs epochs; `validate` returns the selection metric and
// `better(a, b)` says whether a beats b.
TrainResult run_training(const TrainConfig& cfg, const Corpus& corpus, Model model, const LossFn& loss_fn,
                         const std::function<double(const Model&)>& validate_fn,
                         const std::function<bool(double, double)>& better, const std::string& metric_name,
                         const EpochCallback& on_epoch) {
  cfg.validate();
  if (corpus.train.empty()) throw Error("training split is empty");
  if (corpus.val.empty()) throw Error("validation split is empty");

  auto params = model.parameter_list();
  ag::AdamState adam;
  ag::AdamConfig adam_cfg;
  adam_cfg.lr = cfg.lr;

  TrainResult result{model, {metric_name, {}}, 0, 0.0};
  ag::NamedTensors best;
  bool have_best = false;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto start = Clock::now();
    const auto order = epoch_order(corpus.train.size(), cfg.seed, epoch);
    EpochLog row;
    row.epoch = epoch;
    for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), b + static_cast<std::size_t>(cfg.batch_size));
      const double inv_batch = 1.0 / static_cast<double>(end - b);
      for (auto& p : params) p.zero_grad();
      for (std::size_t i = b; i < end; ++i) {
        const auto losses = loss_fn(model, corpus.train[order[i]]);
        ag::scale(losses.total, inv_batch).backward();
        row.loss += losses.total.item();
        row.asr += losses.asr;
        row.accent += losses.accent;
        row.eval += losses.eval;
      }
      ag::clip_grad_norm(params, cfg.grad_clip);
      ag::adam_step(params, adam, adam_cfg);
    }
    const double n = static_cast<double>(order.size());
    row.loss /= n;
    row.asr /= n;
    row.accent /= n;
    row.eval /= n;
    row.val_metric = validate_fn(model);
    row.wall_seconds = std::chrono::duration<double>(Clock::now() - start).count();
    if (!have_best || better(row.val_metric, result.best_metric)) {
      best = snapshot(model);
      have_best = true;
      result.best_epoch = epoch;
      result.best_metric = row.val_metric;
    }
    result.log.rows.push_back(row);
    if (on_epoch) on_epoch(row);
  }
  restore(model, best);
  result.model = std::move(model);
  return result;
}

void write_outputs(const TrainConfig& cfg, const TrainResult& result) {
  if (!cfg.out_checkpoint.empty()) result.model.save(cfg.out_checkpoint);
  if (!cfg.log.empty()) {
    std::ofstream out(cfg.log, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write training log " + cfg.log);
    out << result.log.to_csv();
  }
}

Corpus corpus_from(const TrainConfig& cfg) {
  if (cfg.data.empty()) throw Error("training config has no data manifest");
  return load_corpus(read_manifest(cfg.data), cfg.model);
}

}  // namespace

double teacher_forced_per(const Model& model, const std::vector<Example>& examples) {
  if (examples.empty()) throw Error("teacher_forced_per: no examples");
  ag::NoGradGuard no_grad;
  long edits = 0, total = 0;
  for (const auto& ex : examples) {
    const auto enc = model.encode(ex.features);
    const auto logits = model.decode_asr_teacher_forced(enc.memory, ex.canonical.view());
    std::vector<int> hyp;
    const int cols = logits.cols();
    const auto v = logits.values();
    for (int r = 0; r < logits.rows(); ++r) {
      int best = kEos;
      for (int c = 0; c < kNumPhonemes; ++c) {
        if (v[static_cast<std::size_t>(r) * cols + c] > v[static_cast<std::size_t>(r) * cols + best]) best = c;
      }
      if (best == kEos) break;
      hyp.push_back(best);
    }
    edits += edit_distance(ex.canonical.view(), hyp);
    total += ex.canonical.size();
  }
  return static_cast<double>(edits) / static_cast<double>(total);
}

TrainResult pretrain_asr(const TrainConfig& cfg, const Corpus& corpus, const Model* init, const EpochCallback& on_epoch) {
  if (cfg.stage != Stage::pretrain_asr) throw Error("pretrain_asr requires stage=pretrain_asr");
  cfg.validate();
  Model model(cfg.model, ModelMode::asr_baseline, cfg.seed);
  if (init) {
    try {
      model.copy_parameters_from(*init);
    } catch (const Error& e) {
      throw Error(std::string("incompatible checkpoint: ") + e.what());
    }
  }
  const double alpha = cfg.weights.alpha;
  auto loss_fn = [alpha](const Model& m, const Example& ex) {
    const auto enc = m.encode(ex.features);
    const auto logits = m.decode_asr_teacher_forced(enc.memory, ex.canonical.view());
    const auto labels = asr_labels(ex.canonical.view());
    const std::vector<int> mask(labels.size(), 1);
    const Tensor l_asr = asr_loss(logits, labels, mask);
    const Tensor l_a = accent_loss(enc.accent_logits, ex.accent);
    return StepLosses{combined_pretrain_loss(l_asr, l_a, alpha), l_asr.item(), l_a.item(), 0.0};
  };
  auto validate_fn = [&corpus](const Model& m) { return teacher_forced_per(m, corpus.val); };
  return run_training(cfg, corpus, std::move(model), loss_fn, validate_fn, [](double a, double b) { return a < b; },
                      "per", on_epoch);
}

TrainResult adapt_aped(const TrainConfig& cfg, const Corpus& corpus, const Model& init, const EpochCallback& on_epoch) {
  if (cfg.stage != Stage::adapt_aped) throw Error("adapt_aped requires stage=adapt_aped");
  cfg.validate();
  Model model(cfg.model, ModelMode::conditioned, cfg.seed);
  {
    // Shape-compatible means identical parameter names and shapes; the
    // decoder mask may differ from the pretrained model's.
    const auto& src = init.parameters();
    const auto& dst = model.parameters();
    if (src.size() != dst.size()) throw Error("incompatible checkpoint: parameter sets differ");
    for (const auto& [name, t] : dst) {
      auto it = src.find(name);
      if (it == src.end() || it->second.shape() != t.shape()) {
        throw Error("incompatible checkpoint: parameter '" + name + "' is missing or has another shape");
      }
      Tensor d = t;
      std::copy(it->second.values().begin(), it->second.values().end(), d.mutable_values().begin());
    }
  }
  const LossWeights weights = cfg.weights;
  auto loss_fn = [weights](const Model& m, const Example& ex) {
    const auto enc = m.encode(ex.features);
    const auto out = m.decode_conditioned(enc.memory, ex.target.view());
    const Tensor l_eval = eval_loss(weights, out.error_probs, ex.labels.error_states);
    const Tensor l_asr = asr_loss(out.phoneme_logits, ex.labels.aligned_canonical, ex.labels.asr_mask);
    const Tensor l_a = accent_loss(enc.accent_logits, ex.accent);
    return StepLosses{combined_aped_loss(l_eval, l_asr, l_a, weights.alpha, weights.beta), l_asr.item(), l_a.item(),
                      l_eval.item()};
  };
  auto validate_fn = [&corpus](const Model& m) { return evaluate(m, corpus.val, kDefaultTheta).report.f1; };
  return run_training(cfg, corpus, std::move(model), loss_fn, validate_fn, [](double a, double b) { return a > b; },
                      "f1", on_epoch);
}

TrainResult pretrain_asr(const TrainConfig& cfg, const EpochCallback& on_epoch) {
  const Corpus corpus = corpus_from(cfg);
  std::optional<Model> init;
  if (!cfg.init_checkpoint.empty()) init = Model::load(cfg.init_checkpoint);
  auto result = pretrain_asr(cfg, corpus, init ? &*init : nullptr, on_epoch);
  write_outputs(cfg, result);
  return result;
}

TrainResult adapt_aped(const TrainConfig& cfg, const EpochCallback& on_epoch) {
  if (cfg.init_checkpoint.empty()) throw Error("adapt_aped needs init_checkpoint");
  const Corpus corpus = corpus_from(cfg);
  const Model init = Model::load(cfg.init_checkpoint);
  auto result = adapt_aped(cfg, corpus, init, on_epoch);
  write_outputs(cfg, result);
  return result;
}

// ---- evaluation ------------------------------------------------------------

std::vector<UtterancePrediction> EvalResult::predictions() const {
  std::vector<UtterancePrediction> out;
  out.reserve(rows.size());
  for (const auto& r : rows) out.push_back({r.probs, r.states});
  return out;
}

std::string EvalResult::rows_csv() const {
  std::ostringstream out;
  out << "id,k,errors,error_rate,tr,fr,fa,ta,accent,accent_predicted\n";
  char buf[256];
  for (const auto& r : rows) {
    const auto c = confusion(r.predicted, r.states);
    const int errors = std::accumulate(r.states.begin(), r.states.end(), 0);
    std::snprintf(buf, sizeof buf, "%s,%zu,%d,%.6f,%lld,%lld,%lld,%lld,%d,%d\n", r.id.c_str(), r.states.size(), errors,
                  r.error_rate, static_cast<long long>(c.tr), static_cast<long long>(c.fr),
                  static_cast<long long>(c.fa), static_cast<long long>(c.ta), r.accent, r.accent_predicted);
    out << buf;
  }
  return out.str();
}

EvalResult evaluate(const Model& model, const std::vector<Example>& examples, double theta,
                    std::optional<ModelMode> mode) {
  if (examples.empty()) throw Error("evaluate: no examples");
  const ModelMode m = mode.value_or(model.mode());
  EvalResult result;
  ConfusionCounts pooled;
  int accent_hits = 0;
  ag::NoGradGuard no_grad;
  for (const auto& ex : examples) {
    UtteranceEval row;
    row.id = ex.id;
    row.states = ex.labels.error_states;
    row.accent = ex.accent.id;
    const int errors = std::accumulate(row.states.begin(), row.states.end(), 0);
    row.error_rate = static_cast<double>(errors) / static_cast<double>(row.states.size());

    const auto enc = model.encode(ex.features);
    const auto accent_logits = enc.accent_logits.values();
    row.accent_predicted = static_cast<int>(std::max_element(accent_logits.begin(), accent_logits.end()) - accent_logits.begin());
    if (m == ModelMode::conditioned) {
      const auto out = model.decode_conditioned(enc.memory, ex.target.view());
      const auto probs = out.error_probs.values();
      row.probs.assign(probs.begin() + 1, probs.end());
      row.predicted = binarize(row.probs, theta);
    } else {
      const auto rec = model.decode_asr_autoregressive(enc.memory, 2 * ex.target.size());
      row.predicted = derive_labels(nw_align(rec, ex.target)).error_states;
      row.probs.assign(row.predicted.begin(), row.predicted.end());
      if (!rec.ids.empty()) row.recognized = render_phoneme_string(rec);
    }
    if (row.accent_predicted == row.accent) ++accent_hits;
    pooled += confusion(row.predicted, row.states);
    result.rows.push_back(std::move(row));
  }
  result.report = report(pooled, theta);
  result.accent_accuracy = static_cast<double>(accent_hits) / static_cast<double>(examples.size());
  return result;
}

std::vector<BucketReport> breakdown_by_error_rate(const std::vector<UtteranceEval>& rows, int quantiles) {
  if (quantiles < 1) throw Error("breakdown: quantiles must be >= 1");
  if (rows.empty()) throw Error("breakdown: no utterances");
  std::vector<double> rates;
  rates.reserve(rows.size());
  for (const auto& r : rows) rates.push_back(r.error_rate);
  std::sort(rates.begin(), rates.end());
  const std::size_t n = rates.size();

  std::vector<BucketReport> buckets(static_cast<std::size_t>(quantiles));
  for (int q = 0; q < quantiles; ++q) {
    // Nearest-rank quantile: the ceil((q+1) n / Q)-th smallest rate.
    const std::size_t rank = (static_cast<std::size_t>(q + 1) * n + quantiles - 1) / quantiles;
    buckets[q].index = q + 1;
    buckets[q].upper = rates[rank - 1];
    buckets[q].lower = q == 0 ? 0.0 : buckets[q - 1].upper;
  }
  std::vector<ConfusionCounts> counts(buckets.size());
  for (const auto& r : rows) {
    for (std::size_t q = 0; q < buckets.size(); ++q) {
      const bool above_lower = q == 0 ? r.error_rate >= buckets[q].lower : r.error_rate > buckets[q].lower;
      if (above_lower && r.error_rate <= buckets[q].upper) {
        counts[q] += confusion(r.predicted, r.states);
        ++buckets[q].utterances;
        break;
      }
    }
  }
  for (std::size_t q = 0; q < buckets.size(); ++q) {
    if (buckets[q].utterances == 0) {
      throw Error("breakdown: quantile bucket " + std::to_string(q + 1) +
                  " is empty (tied error rates); use fewer quantiles");
    }
    buckets[q].report = report(counts[q]);
  }
  return buckets;
}

std::string breakdown_csv(const std::vector<BucketReport>& buckets) {
  std::ostringstream out;
  out << "quantile,lower,upper,utterances,precision,recall,f1,far,frr,degenerate\n";
  char buf[256];
  for (const auto& b : buckets) {
    std::snprintf(buf, sizeof buf, "%d,%.6f,%.6f,%d,%.6f,%.6f,%.6f,%.6f,%.6f,%d\n", b.index, b.lower, b.upper,
                  b.utterances, b.report.precision, b.report.recall, b.report.f1, b.report.far, b.report.frr,
                  b.report.degenerate ? 1 : 0);
    out << buf;
  }
  return out.str();
}

double all_reject_f1(const std::vector<Example>& examples) {
  ConfusionCounts c;
  for (const auto& ex : examples) {
    const std::vector<int> all(ex.labels.error_states.size(), 1);
    c += confusion(all, ex.labels.error_states);
  }
  return report(c).f1;
}

}  // namespace aped
