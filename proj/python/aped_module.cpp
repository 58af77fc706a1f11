#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "aped/alignment.hpp"
#include "aped/error.hpp"
#include "aped/metrics.hpp"
#include "aped/model.hpp"
#include "aped/synthdata.hpp"
#include "aped/training.hpp"

namespace py = pybind11;
using namespace aped;

namespace {

py::dict report_dict(const MetricsReport& r) {
  py::dict d;
  d["theta"] = r.theta;
  d["precision"] = r.precision;
  d["recall"] = r.recall;
  d["f1"] = r.f1;
  d["accuracy"] = r.accuracy;
  d["far"] = r.far;
  d["frr"] = r.frr;
  d["ta"] = r.counts.ta;
  d["fr"] = r.counts.fr;
  d["fa"] = r.counts.fa;
  d["tr"] = r.counts.tr;
  d["degenerate"] = r.degenerate;
  return d;
}

std::vector<UtterancePrediction> to_predictions(const std::vector<std::vector<double>>& probs,
                                                const std::vector<std::vector<int>>& states) {
  if (probs.size() != states.size()) throw Error("probs and states hold different utterance counts");
  std::vector<UtterancePrediction> out;
  for (std::size_t i = 0; i < probs.size(); ++i) out.push_back({probs[i], states[i]});
  return out;
}

Split split_of(const std::string& name) { return parse_split(name); }

}  // namespace

PYBIND11_MODULE(_aped, m) {
  m.doc() = "Core bindings: alignment, metrics, corpus generation, training and inference.";
  m.attr("__version__") = "1.0.0";

  py::register_exception<Error>(m, "ApedError", PyExc_ValueError);

  m.def("parse_phonemes", [](const std::string& text) { return parse_phoneme_string(text).ids; }, py::arg("text"),
        "Space-separated ARPAbet symbols to inventory indices.");
  m.def("render_phonemes", [](const std::vector<int>& ids) { return render_phoneme_string(ids); }, py::arg("ids"));

  m.def(
      "align",
      [](const std::string& target, const std::string& canonical) {
        const auto t = parse_phoneme_string(target, PhonemeInventory::arpabet(), SequenceKind::target);
        const auto c = parse_phoneme_string(canonical, PhonemeInventory::arpabet(), SequenceKind::canonical);
        const auto result = nw_align(c, t);
        const auto labels = derive_labels(result);
        py::list ops;
        for (const auto& col : result.columns) ops.append(to_string(col.op));
        py::dict d;
        d["score"] = result.score;
        d["ops"] = ops;
        d["error_states"] = labels.error_states;
        d["aligned_canonical"] = labels.aligned_canonical;
        d["asr_mask"] = labels.asr_mask;
        return d;
      },
      py::arg("target"), py::arg("canonical"),
      "Aligns what was said against the target and folds the result onto target positions.");

  m.def(
      "metrics",
      [](const std::vector<int>& predicted, const std::vector<int>& truth, double theta) {
        return report_dict(report(confusion(predicted, truth), theta));
      },
      py::arg("predicted"), py::arg("truth"), py::arg("theta") = kDefaultTheta);

  m.def(
      "theta_sweep",
      [](const std::vector<std::vector<double>>& probs, const std::vector<std::vector<int>>& states,
         const std::vector<double>& thetas) {
        const auto preds = to_predictions(probs, states);
        py::list out;
        for (const auto& r : theta_sweep(preds, thetas.empty() ? default_theta_grid() : thetas))
          out.append(report_dict(r));
        return out;
      },
      py::arg("probs"), py::arg("states"), py::arg("thetas") = std::vector<double>{});

  m.def(
      "generate_corpus",
      [](const std::filesystem::path& out_dir, int n_utts, std::uint64_t seed, double p_error, int min_len,
         int max_len) {
        CorpusConfig cfg;
        cfg.n_utts = n_utts;
        cfg.seed = seed;
        cfg.corruption.p_error = p_error;
        cfg.min_len = min_len;
        cfg.max_len = max_len;
        const auto manifest = generate_corpus(cfg, out_dir);
        return (out_dir / kManifestName).string();
      },
      py::arg("out_dir"), py::arg("n_utts") = 2000, py::arg("seed") = 1, py::arg("p_error") = 0.1456,
      py::arg("min_len") = 20, py::arg("max_len") = 40, "Writes a synthetic corpus and returns the manifest path.");

  m.def(
      "train",
      [](const std::string& config_text) {
        const auto cfg = TrainConfig::parse(config_text);
        TrainResult r = [&] {
          py::gil_scoped_release release;
          return cfg.stage == Stage::pretrain_asr ? pretrain_asr(cfg) : adapt_aped(cfg);
        }();
        py::dict d;
        d["best_epoch"] = r.best_epoch;
        d["best_metric"] = r.best_metric;
        d["log"] = r.log.to_csv();
        return d;
      },
      py::arg("config_text"), "Runs one training stage from key=value config text.");

  m.def(
      "all_reject_f1",
      [](const std::string& manifest, const std::string& split) {
        const auto examples = load_examples(read_manifest(manifest), split_of(split), ModelConfig::desk());
        return all_reject_f1(examples);
      },
      py::arg("manifest"), py::arg("split") = "test");

  py::class_<Model>(m, "Model")
      .def_static("load", &Model::load, py::arg("path"))
      .def_property_readonly("mode", [](const Model& self) { return std::string(to_string(self.mode())); })
      .def_property_readonly("parameter_count", &Model::parameter_count)
      .def(
          "predict_error_probs",
          [](const Model& self, const std::vector<std::vector<double>>& features, const std::vector<int>& target) {
            if (features.empty()) throw Error("no feature frames");
            const int dims = static_cast<int>(features.front().size());
            FeatureMatrix raw(static_cast<int>(features.size()), dims);
            for (std::size_t t = 0; t < features.size(); ++t) {
              if (static_cast<int>(features[t].size()) != dims) throw Error("ragged feature frames");
              for (int d = 0; d < dims; ++d) raw.at(static_cast<int>(t), d) = features[t][d];
            }
            return self.predict_error_probs(self.prepare(raw), PhonemeSequence{target, SequenceKind::target});
          },
          py::arg("features"), py::arg("target"), "Raw frames x 39 features and target indices to k scores.");

  m.def(
      "evaluate",
      [](const std::string& checkpoint, const std::string& manifest, const std::string& split, double theta,
         const std::string& mode) {
        Model model = Model::load(checkpoint);
        if (!mode.empty()) model.set_mode(parse_model_mode(mode));
        const auto examples = load_examples(read_manifest(manifest), split_of(split), model.config());
        EvalResult r = [&] {
          py::gil_scoped_release release;
          return evaluate(model, examples, theta);
        }();
        py::dict d = report_dict(r.report);
        d["accent_accuracy"] = r.accent_accuracy;
        d["utterances"] = r.rows.size();
        return d;
      },
      py::arg("checkpoint"), py::arg("manifest"), py::arg("split") = "test", py::arg("theta") = kDefaultTheta,
      py::arg("mode") = "");
}
