#include "aped/synthdata.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "aped/error.hpp"

namespace aped {

void CorruptionConfig::validate() const {
  if (!(p_error >= 0.0 && p_error < 1.0)) throw Error("p_error must lie in [0, 1)");
  if (substitution < 0 || deletion < 0 || insertion < 0) throw Error("corruption mix must be non-negative");
  if (std::abs(substitution + deletion + insertion - 1.0) > 1e-9) throw Error("corruption mix must sum to 1");
}

void RenderConfig::validate() const {
  if (min_frames < 1 || max_frames < min_frames) throw Error("frames_per_phoneme range must satisfy 1 <= min <= max");
  if (!(noise_sigma >= 0.0)) throw Error("noise_sigma must be >= 0");
}

AcousticPrototypes::AcousticPrototypes(const RenderConfig& cfg)
    : phonemes_(static_cast<std::size_t>(kNumPhonemes) * kRawFeatureDim),
      accents_(static_cast<std::size_t>(kNumAccents) * kRawFeatureDim) {
  cfg.validate();
  CounterRng ph_rng(derive_key(cfg.prototype_seed, "phoneme-prototypes"));
  for (auto& v : phonemes_) v = ph_rng.normal();

  CounterRng acc_rng(derive_key(cfg.prototype_seed, "accent-directions"));
  for (int a = 0; a < kNumAccents; ++a) {
    std::span<double> dir(accents_.data() + static_cast<std::size_t>(a) * kRawFeatureDim, kRawFeatureDim);
    for (auto& v : dir) v = acc_rng.normal();
    for (int b = 0; b < a; ++b) {
      std::span<const double> prev(accents_.data() + static_cast<std::size_t>(b) * kRawFeatureDim, kRawFeatureDim);
      const double dot = std::inner_product(dir.begin(), dir.end(), prev.begin(), 0.0);
      for (int i = 0; i < kRawFeatureDim; ++i) dir[i] -= dot * prev[i];
    }
    const double norm = std::sqrt(std::inner_product(dir.begin(), dir.end(), dir.begin(), 0.0));
    for (auto& v : dir) v /= norm;
  }
  // Scale only after orthonormalisation so the projections above stay exact.
  for (auto& v : accents_) v *= cfg.accent_shift_scale;
}

std::span<const double> AcousticPrototypes::phoneme(int id) const {
  if (id < 0 || id >= kNumPhonemes) throw Error("no acoustic prototype for index " + std::to_string(id));
  return {phonemes_.data() + static_cast<std::size_t>(id) * kRawFeatureDim, kRawFeatureDim};
}

std::span<const double> AcousticPrototypes::accent(int id) const {
  AccentLabel checked(id);
  return {accents_.data() + static_cast<std::size_t>(checked.id) * kRawFeatureDim, kRawFeatureDim};
}

PhonemeSequence corrupt(const PhonemeSequence& target, const CorruptionConfig& cfg, CounterRng& rng) {
  cfg.validate();
  validate(target);
  PhonemeSequence out;
  out.kind = SequenceKind::canonical;
  do {
    out.ids.clear();
    for (int t : target.ids) {
      if (rng.uniform() >= cfg.p_error) {
        out.ids.push_back(t);
        continue;
      }
      const double op = rng.uniform();
      if (op < cfg.substitution) {
        const int shift = 1 + static_cast<int>(rng.below(kNumPhonemes - 1));
        out.ids.push_back((t + shift) % kNumPhonemes);
      } else if (op < cfg.substitution + cfg.deletion) {
        // dropped
      } else {
        out.ids.push_back(t);
        out.ids.push_back(static_cast<int>(rng.below(kNumPhonemes)));
      }
    }
  } while (out.ids.empty());
  return out;
}

FeatureMatrix render_features(const PhonemeSequence& canonical, AccentLabel accent,
                              const AcousticPrototypes& prototypes, const RenderConfig& cfg,
                              CounterRng& rng) {
  cfg.validate();
  validate(canonical);
  std::vector<int> durations;
  durations.reserve(canonical.ids.size());
  int frames = 0;
  for (std::size_t i = 0; i < canonical.ids.size(); ++i) {
    durations.push_back(rng.range(cfg.min_frames, cfg.max_frames));
    frames += durations.back();
  }
  FeatureMatrix out(frames, kRawFeatureDim);
  const auto bias = prototypes.accent(accent.id);
  int f = 0;
  for (std::size_t i = 0; i < canonical.ids.size(); ++i) {
    const auto proto = prototypes.phoneme(canonical.ids[i]);
    for (int d = 0; d < durations[i]; ++d, ++f) {
      auto row = out.row(f);
      for (int c = 0; c < kRawFeatureDim; ++c) {
        row[c] = proto[c] + bias[c] + (cfg.noise_sigma > 0.0 ? cfg.noise_sigma * rng.normal() : 0.0);
      }
    }
  }
  return out;
}

FeatureMatrix render_features(const PhonemeSequence& canonical, AccentLabel accent, const RenderConfig& cfg,
                              CounterRng& rng) {
  return render_features(canonical, accent, AcousticPrototypes(cfg), cfg, rng);
}

const char* to_string(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

Split parse_split(std::string_view text) {
  if (text == "train") return Split::train;
  if (text == "val") return Split::val;
  if (text == "test") return Split::test;
  throw Error("unknown split '" + std::string(text) + "' (expected train, val or test)");
}

Split assign_split(std::size_t record_index, const SplitRatios& ratios) {
  if (ratios.train < 0 || ratios.val < 0 || ratios.test < 0 || ratios.train + ratios.val + ratios.test <= 0) {
    throw Error("split ratios must be non-negative with a positive sum");
  }
  const std::size_t block_size = static_cast<std::size_t>(ratios.train + ratios.val + ratios.test);
  const std::size_t block = record_index / block_size;
  std::vector<std::size_t> slots(block_size);
  std::iota(slots.begin(), slots.end(), 0);
  CounterRng rng(derive_key(0, "split-block", block));
  for (std::size_t i = block_size; i > 1; --i) std::swap(slots[i - 1], slots[rng.below(i)]);
  const std::size_t slot = slots[record_index % block_size];
  if (slot < static_cast<std::size_t>(ratios.train)) return Split::train;
  if (slot < static_cast<std::size_t>(ratios.train + ratios.val)) return Split::val;
  return Split::test;
}

std::string record_id(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "utt%06zu", index);
  return buf;
}

std::vector<const ManifestRecord*> Manifest::select(Split split) const {
  std::vector<const ManifestRecord*> out;
  for (const auto& r : records) {
    if (r.split == split) out.push_back(&r);
  }
  return out;
}

const ManifestRecord* Manifest::find(std::string_view id) const {
  for (const auto& r : records) {
    if (r.id == id) return &r;
  }
  return nullptr;
}

void write_manifest(const Manifest& manifest, const std::filesystem::path& path) {
  const auto& inv = PhonemeInventory::arpabet();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write manifest " + path.string());
  for (const auto& r : manifest.records) {
    nlohmann::ordered_json j;
    j["id"] = r.id;
    j["accent"] = r.accent.id;
    j["target"] = render_phoneme_string(r.target, inv);
    j["canonical"] = render_phoneme_string(r.canonical, inv);
    j["error_states"] = render_bits(r.labels.error_states);
    j["aligned_canonical"] = render_phoneme_string(r.labels.aligned_canonical, inv);
    j["asr_mask"] = render_bits(r.labels.asr_mask);
    j["feature_path"] = r.feature_path;
    j["split"] = to_string(r.split);
    out << j.dump() << '\n';
  }
  if (!out) throw Error("write failed for manifest " + path.string());
}

Manifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open manifest " + path.string());
  const auto& inv = PhonemeInventory::arpabet();
  Manifest manifest;
  manifest.base_dir = path.parent_path();
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    try {
      const auto j = nlohmann::json::parse(line);
      ManifestRecord r;
      r.id = j.at("id").get<std::string>();
      r.accent = AccentLabel(j.at("accent").get<int>());
      r.target = parse_phoneme_string(j.at("target").get<std::string>(), inv, SequenceKind::target);
      r.canonical = parse_phoneme_string(j.at("canonical").get<std::string>(), inv, SequenceKind::canonical);
      r.labels.error_states = parse_bits(j.at("error_states").get<std::string>());
      r.labels.aligned_canonical =
          parse_phoneme_string(j.at("aligned_canonical").get<std::string>(), inv, SequenceKind::recognized).ids;
      r.labels.asr_mask = parse_bits(j.at("asr_mask").get<std::string>());
      r.feature_path = j.at("feature_path").get<std::string>();
      r.split = parse_split(j.at("split").get<std::string>());

      const std::size_t k = r.target.ids.size();
      if (r.labels.error_states.size() != k) throw FormatError("error_states length differs from target length");
      if (r.labels.aligned_canonical.size() != k + 1 || r.labels.asr_mask.size() != k + 1) {
        throw FormatError("aligned_canonical/asr_mask must have length k+1");
      }
      if (r.labels.aligned_canonical.back() != kEos || r.labels.asr_mask.back() != 1) {
        throw FormatError("aligned_canonical must end with <eos> and asr_mask with 1");
      }
      if (!std::filesystem::exists(manifest.base_dir / r.feature_path)) {
        throw Error("feature file " + (manifest.base_dir / r.feature_path).string() + " does not exist");
      }
      manifest.records.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(where + ": " + e.what());
    } catch (const Error& e) {
      throw FormatError(where + ": " + e.what());
    }
  }
  return manifest;
}

namespace {

PhonemeSequence draw_target(const CorpusConfig& cfg, CounterRng& rng) {
  PhonemeSequence target;
  target.kind = SequenceKind::target;
  const int len = rng.range(cfg.min_len, cfg.max_len);
  for (int t = 0; t < len; ++t) target.ids.push_back(static_cast<int>(rng.below(kNumPhonemes)));
  return target;
}

}  // namespace

Manifest generate_corpus(const CorpusConfig& cfg, const std::filesystem::path& out_dir) {
  if (cfg.n_utts < 1) throw Error("generate_corpus: n_utts must be >= 1");
  if (cfg.min_len < 1 || cfg.max_len < cfg.min_len) throw Error("generate_corpus: invalid length range");
  if (cfg.n_accents < 1 || cfg.n_accents > kNumAccents) throw Error("generate_corpus: n_accents must be in [1, 6]");
  cfg.corruption.validate();
  cfg.render.validate();

  std::error_code ec;
  std::filesystem::create_directories(out_dir / "features", ec);
  if (ec) throw Error("cannot create corpus directory " + out_dir.string() + ": " + ec.message());

  const AcousticPrototypes prototypes(cfg.render);
  Manifest manifest;
  manifest.base_dir = out_dir;
  manifest.records.reserve(static_cast<std::size_t>(cfg.n_utts));
  for (int i = 0; i < cfg.n_utts; ++i) {
    const auto idx = static_cast<std::uint64_t>(i);
    ManifestRecord r;
    r.id = record_id(idx);

    CounterRng text_rng(derive_key(cfg.seed, "text", idx));
    r.target = draw_target(cfg, text_rng);
    r.accent = AccentLabel(static_cast<int>(text_rng.below(static_cast<std::uint64_t>(cfg.n_accents))));

    CounterRng err_rng(derive_key(cfg.seed ^ cfg.corruption.rng_seed, "corruption", idx));
    r.canonical = corrupt(r.target, cfg.corruption, err_rng);
    r.labels = derive_labels(nw_align(r.canonical, r.target, cfg.costs));

    CounterRng render_rng(derive_key(cfg.seed, "render", idx));
    const auto features = render_features(r.canonical, r.accent, prototypes, cfg.render, render_rng);
    r.feature_path = "features/" + r.id + ".feat";
    write_feature_file(features, out_dir / r.feature_path);
    r.split = assign_split(idx, cfg.ratios);
    manifest.records.push_back(std::move(r));
  }
  write_manifest(manifest, out_dir / kManifestName);
  return manifest;
}

}  // namespace aped
