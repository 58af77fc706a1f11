// Command-line front end: corpus generation, alignment, training,
// evaluation, threshold sweeps, latency benchmarking, attention export.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "aped/alignment.hpp"
#include "aped/bench.hpp"
#include "aped/error.hpp"
#include "aped/metrics.hpp"
#include "aped/model.hpp"
#include "aped/phoneme.hpp"
#include "aped/synthdata.hpp"
#include "aped/training.hpp"

namespace fs = std::filesystem;
using namespace aped;

namespace {

constexpr const char* kVersion = "aped 1.0.0 (features v1, checkpoint v1, manifest v1)";

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
  if (!out) throw Error("write failed: " + path.string());
}

void require_file(const std::string& path, const char* what) {
  if (!fs::exists(path)) throw Error(std::string(what) + " not found: " + path);
}

void print_report(const MetricsReport& r) {
  std::printf("theta=%.2f precision=%.4f recall=%.4f f1=%.4f accuracy=%.4f far=%.4f frr=%.4f%s\n", r.theta,
              r.precision, r.recall, r.f1, r.accuracy, r.far, r.frr, r.degenerate ? " (degenerate)" : "");
  std::printf("counts ta=%lld fr=%lld fa=%lld tr=%lld\n", static_cast<long long>(r.counts.ta),
              static_cast<long long>(r.counts.fr), static_cast<long long>(r.counts.fa),
              static_cast<long long>(r.counts.tr));
}

struct EvalInputs {
  std::string ckpt;
  std::string data;
  std::string split = "test";
  std::string mode;
};

void add_eval_inputs(CLI::App* cmd, EvalInputs& in) {
  cmd->add_option("--ckpt", in.ckpt, "Model checkpoint")->required();
  cmd->add_option("--data", in.data, "Corpus manifest (manifest.jsonl)")->required();
  cmd->add_option("--split", in.split, "train, val or test")->capture_default_str();
  cmd->add_option("--mode", in.mode, "conditioned or asr_baseline (default: checkpoint mode)");
}

struct Loaded {
  Model model;
  std::vector<Example> examples;
};

Loaded load_inputs(const EvalInputs& in) {
  require_file(in.ckpt, "checkpoint");
  require_file(in.data, "manifest");
  Model model = Model::load(in.ckpt);
  if (!in.mode.empty()) model.set_mode(parse_model_mode(in.mode));
  const auto manifest = read_manifest(in.data);
  auto examples = load_examples(manifest, parse_split(in.split), model.config());
  if (examples.empty()) throw Error("split '" + in.split + "' is empty in " + in.data);
  return {std::move(model), std::move(examples)};
}

void print_epoch(const EpochLog& row, const char* metric) {
  std::printf("epoch %3d  loss %.5f  asr %.5f  accent %.5f  eval %.5f  val_%s %.5f  (%.1fs)\n", row.epoch, row.loss,
              row.asr, row.accent, row.eval, metric, row.val_metric, row.wall_seconds);
  std::fflush(stdout);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Pronunciation error detection with a text-conditioned feed-forward Transformer"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  // gen-data
  CorpusConfig corpus;
  std::string gen_out;
  auto* gen = app.add_subcommand("gen-data", "Generate a seeded synthetic corpus");
  gen->add_option("--seed", corpus.seed, "Corpus seed")->capture_default_str();
  gen->add_option("--utts", corpus.n_utts, "Number of utterances")->capture_default_str()->check(CLI::PositiveNumber);
  gen->add_option("--error-rate", corpus.corruption.p_error, "Per-phoneme error probability")
      ->capture_default_str()
      ->check(CLI::Range(0.0, 1.0));
  gen->add_option("--min-len", corpus.min_len, "Shortest target")->capture_default_str();
  gen->add_option("--max-len", corpus.max_len, "Longest target")->capture_default_str();
  gen->add_option("--min-frames", corpus.render.min_frames, "Fewest raw frames per phoneme")->capture_default_str();
  gen->add_option("--max-frames", corpus.render.max_frames, "Most raw frames per phoneme")->capture_default_str();
  gen->add_option("--noise", corpus.render.noise_sigma, "Per-coefficient noise standard deviation")
      ->capture_default_str();
  gen->add_option("--accent-shift", corpus.render.accent_shift_scale, "Length of each accent's bias vector")
      ->capture_default_str();
  gen->add_option("--out", gen_out, "Output directory")->required();

  // align
  std::string align_target, align_canonical, align_inventory;
  auto* align = app.add_subcommand("align", "Align target against pronounced phonemes");
  align->add_option("--target", align_target, "Target phonemes, space separated")->required();
  align->add_option("--canonical", align_canonical, "Pronounced phonemes, space separated")->required();
  align->add_option("--inventory", align_inventory, "Phoneme inventory file (one symbol per line)");

  // pretrain / adapt
  std::string pretrain_cfg, adapt_cfg;
  auto* pretrain = app.add_subcommand("pretrain", "ASR pretraining with the accent head");
  pretrain->add_option("--config", pretrain_cfg, "key=value training config")->required();
  auto* adapt = app.add_subcommand("adapt", "Text-conditioned APED adaptation");
  adapt->add_option("--config", adapt_cfg, "key=value training config")->required();

  // eval
  EvalInputs eval_in;
  double eval_theta = kDefaultTheta;
  std::string eval_out;
  auto* eval = app.add_subcommand("eval", "Pooled metrics on one split");
  add_eval_inputs(eval, eval_in);
  eval->add_option("--theta", eval_theta, "Decision threshold")->capture_default_str()->check(CLI::Range(0.0, 1.0));
  eval->add_option("--out", eval_out, "Per-utterance CSV");

  // sweep
  EvalInputs sweep_in;
  std::string sweep_thetas = "0.1:0.9:0.1", sweep_out, sweep_svg_path;
  auto* sweep = app.add_subcommand("sweep", "Metrics across a threshold grid");
  add_eval_inputs(sweep, sweep_in);
  sweep->add_option("--thetas", sweep_thetas, "lo:hi:step")->capture_default_str();
  sweep->add_option("--out", sweep_out, "CSV output")->required();
  sweep->add_option("--svg", sweep_svg_path, "Optional SVG with both curves");

  // breakdown
  EvalInputs bd_in;
  int bd_quantiles = 4;
  double bd_theta = kDefaultTheta;
  std::string bd_out;
  auto* breakdown = app.add_subcommand("breakdown", "Metrics by utterance error-rate quantile");
  add_eval_inputs(breakdown, bd_in);
  breakdown->add_option("--quantiles", bd_quantiles, "Number of buckets")->capture_default_str()->check(CLI::PositiveNumber);
  breakdown->add_option("--theta", bd_theta, "Decision threshold")->capture_default_str()->check(CLI::Range(0.0, 1.0));
  breakdown->add_option("--out", bd_out, "CSV output");

  // bench
  EvalInputs bench_in;
  std::string bench_mode = "both", bench_out;
  BenchConfig bench_cfg;
  auto* bench = app.add_subcommand("bench", "Per-sentence inference latency");
  bench->add_option("--ckpt", bench_in.ckpt, "Model checkpoint")->required();
  bench->add_option("--data", bench_in.data, "Corpus manifest")->required();
  bench->add_option("--split", bench_in.split, "train, val or test")->capture_default_str();
  bench->add_option("--mode", bench_mode, "conditioned, asr_autoregressive or both")->capture_default_str();
  bench->add_option("--batch", bench_cfg.batch_size, "Sentences per timed group")->capture_default_str();
  bench->add_option("--reps", bench_cfg.repetitions, "Timed passes over the split (>= 10)")->capture_default_str();
  bench->add_option("--warmup", bench_cfg.warmup, "Untimed passes (>= 1)")->capture_default_str();
  bench->add_option("--out", bench_out, "CSV output");

  // dump-attention
  std::string dump_ckpt, dump_data, dump_utt, dump_out, dump_mode;
  auto* dump = app.add_subcommand("dump-attention", "Export every attention matrix for one utterance");
  dump->add_option("--ckpt", dump_ckpt, "Model checkpoint")->required();
  dump->add_option("--data", dump_data, "Corpus manifest")->required();
  dump->add_option("--utt-id", dump_utt, "Utterance id")->required();
  dump->add_option("--mode", dump_mode, "conditioned or asr_baseline (default: checkpoint mode)");
  dump->add_option("--out", dump_out, "JSON output")->required();

  ag::configure_allocator();
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*gen) {
      if (corpus.min_len < 1 || corpus.max_len < corpus.min_len) throw Error("need 1 <= --min-len <= --max-len");
      const auto manifest = generate_corpus(corpus, gen_out);
      std::printf("wrote %zu utterances to %s\n", manifest.records.size(), gen_out.c_str());
      std::printf("train %zu  val %zu  test %zu\n", manifest.select(Split::train).size(),
                  manifest.select(Split::val).size(), manifest.select(Split::test).size());
    } else if (*align) {
      std::optional<PhonemeInventory> custom;
      if (!align_inventory.empty()) {
        require_file(align_inventory, "inventory");
        custom = PhonemeInventory::load(align_inventory);
      }
      const PhonemeInventory& inv = custom ? *custom : PhonemeInventory::arpabet();
      const auto target = parse_phoneme_string(align_target, inv, SequenceKind::target);
      const auto canonical = parse_phoneme_string(align_canonical, inv, SequenceKind::canonical);
      const auto result = nw_align(canonical, target);
      std::cout << format_alignment(result, derive_labels(result), inv);
    } else if (*pretrain || *adapt) {
      const std::string& path = *pretrain ? pretrain_cfg : adapt_cfg;
      require_file(path, "config");
      auto cfg = TrainConfig::load(path);
      const Stage want = *pretrain ? Stage::pretrain_asr : Stage::adapt_aped;
      if (cfg.stage != want) {
        throw Error(std::string("config stage is ") + to_string(cfg.stage) + ", command expects " + to_string(want));
      }
      if (!cfg.init_checkpoint.empty()) require_file(cfg.init_checkpoint, "init checkpoint");
      require_file(cfg.data, "manifest");
      const char* metric = *pretrain ? "per" : "f1";
      auto cb = [metric](const EpochLog& row) { print_epoch(row, metric); };
      const auto result = *pretrain ? pretrain_asr(cfg, cb) : adapt_aped(cfg, cb);
      std::printf("best epoch %d  val_%s %.5f\n", result.best_epoch, metric, result.best_metric);
      if (!cfg.out_checkpoint.empty()) std::printf("checkpoint %s\n", cfg.out_checkpoint.c_str());
    } else if (*eval) {
      const auto in = load_inputs(eval_in);
      const auto result = evaluate(in.model, in.examples, eval_theta);
      std::printf("%s on %s (%zu utterances)\n", to_string(in.model.mode()), eval_in.split.c_str(), in.examples.size());
      print_report(result.report);
      std::printf("accent accuracy %.4f\n", result.accent_accuracy);
      if (!eval_out.empty()) write_text(eval_out, result.rows_csv());
    } else if (*sweep) {
      const auto thetas = parse_theta_grid(sweep_thetas);
      const auto in = load_inputs(sweep_in);
      const auto result = evaluate(in.model, in.examples, kDefaultTheta);
      const auto preds = result.predictions();
      const auto reports = theta_sweep(preds, thetas);
      write_text(sweep_out, sweep_csv(reports));
      if (!sweep_svg_path.empty()) write_text(sweep_svg_path, sweep_svg(reports));
      for (const auto& r : reports) {
        std::printf("theta %.2f  precision %.4f  recall %.4f  far %.4f  frr %.4f\n", r.theta, r.precision, r.recall,
                    r.far, r.frr);
      }
    } else if (*breakdown) {
      const auto in = load_inputs(bd_in);
      const auto result = evaluate(in.model, in.examples, bd_theta);
      const auto buckets = breakdown_by_error_rate(result.rows, bd_quantiles);
      const auto csv = breakdown_csv(buckets);
      if (!bd_out.empty()) write_text(bd_out, csv);
      std::cout << csv;
    } else if (*bench) {
      bench_cfg.split = bench_in.split;
      const auto in = load_inputs(bench_in);
      std::vector<BenchReport> reports;
      if (bench_mode == "both") {
        bench_cfg.mode = BenchMode::asr_autoregressive;
        reports.push_back(run_bench(in.model, in.examples, bench_cfg));
        bench_cfg.mode = BenchMode::conditioned;
        reports.push_back(run_bench(in.model, in.examples, bench_cfg));
        attach_speedup(reports[0], reports[1]);
      } else {
        bench_cfg.mode = parse_bench_mode(bench_mode);
        reports.push_back(run_bench(in.model, in.examples, bench_cfg));
      }
      const auto csv = bench_csv(reports);
      if (!bench_out.empty()) write_text(bench_out, csv);
      std::cout << csv;
      std::printf("threads %d, %d sentences, %d repetitions\n", reports[0].threads, reports[0].sentences,
                  bench_cfg.repetitions);
    } else if (*dump) {
      require_file(dump_ckpt, "checkpoint");
      require_file(dump_data, "manifest");
      Model model = Model::load(dump_ckpt);
      if (!dump_mode.empty()) model.set_mode(parse_model_mode(dump_mode));
      const auto manifest = read_manifest(dump_data);
      const auto* rec = manifest.find(dump_utt);
      if (!rec) throw Error("utterance '" + dump_utt + "' not in " + dump_data);
      const auto features = model.prepare(read_feature_file(manifest.feature_file(*rec)));
      const auto& text = model.mode() == ModelMode::conditioned ? rec->target : rec->canonical;
      const auto trace = model.dump_attention(features, text);

      nlohmann::ordered_json doc;
      doc["utt_id"] = rec->id;
      doc["mode"] = to_string(model.mode());
      doc["decoder_text"] = render_phoneme_string(text);
      doc["frames"] = features.values.frames();
      auto& maps = doc["maps"] = nlohmann::ordered_json::array();
      for (const auto& m : trace) {
        nlohmann::ordered_json j;
        j["type"] = m.type;
        j["layer"] = m.layer;
        j["head"] = m.head;
        j["rows"] = m.rows;
        j["cols"] = m.cols;
        j["weights"] = m.weights;
        j["mask"] = m.mask;
        maps.push_back(std::move(j));
      }
      write_text(dump_out, doc.dump() + "\n");
      std::printf("wrote %zu attention maps to %s\n", trace.size(), dump_out.c_str());
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "aped: error: %s\n", e.what());
    return 1;
  }
  return 0;
}
