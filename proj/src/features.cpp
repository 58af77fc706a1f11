#include "aped/features.hpp"

#include <cmath>
#include <fstream>

#include "aped/binary_io.hpp"
#include "aped/error.hpp"

namespace aped {

namespace io {

std::vector<char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path);
  return std::vector<char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::string& path, const std::vector<char>& data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path);
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!out) throw Error("write failed for " + path);
}

}  // namespace io

namespace {
constexpr std::string_view kFeatureMagic = "APEDFEAT";
}

FeatureMatrix::FeatureMatrix(int frames, int dims)
    : frames_(frames), dims_(dims), values_(static_cast<std::size_t>(frames) * dims, 0.0) {
  if (frames < 0 || dims < 0) throw Error("feature matrix dimensions must be non-negative");
}

FeatureMatrix::FeatureMatrix(int frames, int dims, std::vector<double> values)
    : frames_(frames), dims_(dims), values_(std::move(values)) {
  if (frames < 0 || dims < 0) throw Error("feature matrix dimensions must be non-negative");
  if (values_.size() != static_cast<std::size_t>(frames) * dims) {
    throw Error("feature matrix payload size does not match frames x dims");
  }
  for (double v : values_) {
    if (!std::isfinite(v)) throw Error("feature matrix contains a non-finite value");
  }
}

StackedFeatures stack_subsample(const FeatureMatrix& raw, int stack, int subsample) {
  if (raw.empty()) throw Error("stack_subsample: empty feature matrix");
  if (stack < 1 || subsample < 1) throw Error("stack_subsample: stack and subsample must be >= 1");
  const int out_frames = (raw.frames() + subsample - 1) / subsample;
  const int dims = raw.dims();
  FeatureMatrix out(out_frames, dims * stack);
  for (int j = 0; j < out_frames; ++j) {
    for (int s = 0; s < stack; ++s) {
      const int src = j * subsample + s;
      if (src >= raw.frames()) break;
      const auto from = raw.row(src);
      std::copy(from.begin(), from.end(), out.row(j).begin() + static_cast<std::ptrdiff_t>(s) * dims);
    }
  }
  return {std::move(out), stack, subsample};
}

void write_feature_file(const FeatureMatrix& matrix, const std::filesystem::path& path) {
  io::ByteWriter w;
  w.bytes(kFeatureMagic);
  w.u8(kFeatureFormatVersion);
  w.u32(static_cast<std::uint32_t>(matrix.frames()));
  w.u32(static_cast<std::uint32_t>(matrix.dims()));
  for (double v : matrix.values()) w.f64(v);
  io::write_file(path.string(), w.buffer());
}

FeatureMatrix read_feature_file(const std::filesystem::path& path) {
  const auto data = io::read_file(path.string());
  io::ByteReader r(data.data(), data.size(), path.string());
  if (data.size() < kFeatureMagic.size() + 9 || r.bytes(kFeatureMagic.size()) != kFeatureMagic) {
    throw FormatError(path.string() + ": malformed header (bad magic)");
  }
  const auto version = r.u8();
  if (version != kFeatureFormatVersion) {
    throw FormatError(path.string() + ": unsupported feature format version " + std::to_string(version));
  }
  const std::uint64_t frames = r.u32();
  const std::uint64_t dims = r.u32();
  if (frames * dims * 8 > r.remaining()) throw FormatError(path.string() + ": truncated payload");
  if (frames * dims * 8 < r.remaining()) throw FormatError(path.string() + ": trailing bytes after payload");
  std::vector<double> values(frames * dims);
  for (auto& v : values) {
    v = r.f64();
    if (!std::isfinite(v)) throw FormatError(path.string() + ": non-finite value in payload");
  }
  return FeatureMatrix(static_cast<int>(frames), static_cast<int>(dims), std::move(values));
}

}  // namespace aped
