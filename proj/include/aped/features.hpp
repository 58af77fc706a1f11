#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace aped {

inline constexpr int kRawFeatureDim = 39;

/// Row-major frames x dims matrix of finite doubles.
class FeatureMatrix {
 public:
  FeatureMatrix() = default;
  FeatureMatrix(int frames, int dims);
  FeatureMatrix(int frames, int dims, std::vector<double> values);

  int frames() const { return frames_; }
  int dims() const { return dims_; }
  bool empty() const { return frames_ == 0; }

  double& at(int frame, int dim) { return values_[static_cast<std::size_t>(frame) * dims_ + dim]; }
  double at(int frame, int dim) const { return values_[static_cast<std::size_t>(frame) * dims_ + dim]; }
  std::span<double> row(int frame) { return {values_.data() + static_cast<std::size_t>(frame) * dims_, static_cast<std::size_t>(dims_)}; }
  std::span<const double> row(int frame) const {
    return {values_.data() + static_cast<std::size_t>(frame) * dims_, static_cast<std::size_t>(dims_)};
  }
  const std::vector<double>& values() const { return values_; }

  bool operator==(const FeatureMatrix&) const = default;

 private:
  int frames_ = 0;
  int dims_ = 0;
  std::vector<double> values_;
};

/// Output frame j concatenates raw frames [j*subsample, j*subsample + stack),
/// zero-padded past the end; frames = ceil(raw_frames / subsample).
struct StackedFeatures {
  FeatureMatrix values;
  int stack = 1;
  int subsample = 1;

  int frames() const { return values.frames(); }
  int dims() const { return values.dims(); }
};

StackedFeatures stack_subsample(const FeatureMatrix& raw, int stack = 5, int subsample = 4);

/// Binary format: "APEDFEAT", version byte, u32 frames, u32 dims (both
/// little-endian), then frames*dims little-endian IEEE doubles, row-major.
inline constexpr std::uint8_t kFeatureFormatVersion = 1;

void write_feature_file(const FeatureMatrix& matrix, const std::filesystem::path& path);
FeatureMatrix read_feature_file(const std::filesystem::path& path);

}  // namespace aped
