#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>

#include "aped/binary_io.hpp"
#include "aped/error.hpp"
#include "aped/features.hpp"

using namespace aped;
namespace fs = std::filesystem;

namespace {

FeatureMatrix ramp(int frames, int dims) {
  FeatureMatrix m(frames, dims);
  for (int t = 0; t < frames; ++t)
    for (int d = 0; d < dims; ++d) m.at(t, d) = t * 100 + d;
  return m;
}

fs::path tmp(const char* name) { return fs::temp_directory_path() / name; }

}  // namespace

TEST_CASE("stacking and subsampling layout") {
  const auto raw = ramp(10, 2);
  const auto s = stack_subsample(raw, 5, 4);
  CHECK(s.frames() == 3);  // ceil(10 / 4)
  CHECK(s.dims() == 10);
  // Output frame j holds raw frames 4j .. 4j+4.
  for (int j = 0; j < 3; ++j) {
    for (int k = 0; k < 5; ++k) {
      const int src = 4 * j + k;
      for (int d = 0; d < 2; ++d) {
        const double expected = src < 10 ? src * 100 + d : 0.0;
        CHECK(s.values.at(j, k * 2 + d) == expected);
      }
    }
  }
}

TEST_CASE("stack 1 subsample 1 is the identity") {
  const auto raw = ramp(7, 3);
  CHECK(stack_subsample(raw, 1, 1).values == raw);
}

TEST_CASE("stacking rejects bad parameters") {
  CHECK_THROWS_AS(stack_subsample(ramp(4, 2), 0, 1), Error);
  CHECK_THROWS_AS(stack_subsample(ramp(4, 2), 2, 0), Error);
  CHECK_THROWS_AS(stack_subsample(FeatureMatrix(), 5, 4), Error);
}

TEST_CASE("feature file round trip is exact") {
  FeatureMatrix m(3, 2, {0.1, -2.5e-300, 1e300, 3.0, -0.0, 7.25});
  write_feature_file(m, tmp("aped_feat_rt.feat"));
  CHECK(read_feature_file(tmp("aped_feat_rt.feat")) == m);
}

TEST_CASE("feature file header layout") {
  write_feature_file(ramp(2, 3), tmp("aped_feat_hdr.feat"));
  const auto bytes = io::read_file(tmp("aped_feat_hdr.feat").string());
  REQUIRE(bytes.size() == 8 + 1 + 4 + 4 + 6 * 8);
  CHECK(std::string(bytes.begin(), bytes.begin() + 8) == "APEDFEAT");
  CHECK(static_cast<unsigned char>(bytes[8]) == kFeatureFormatVersion);
  CHECK(static_cast<unsigned char>(bytes[9]) == 2);
  CHECK(static_cast<unsigned char>(bytes[13]) == 3);
}

TEST_CASE("corrupt feature files are rejected") {
  const auto good = tmp("aped_feat_good.feat");
  write_feature_file(ramp(2, 3), good);
  auto bytes = io::read_file(good.string());

  auto write_and_read = [&](std::vector<char> b) {
    io::write_file(tmp("aped_feat_bad.feat").string(), b);
    return read_feature_file(tmp("aped_feat_bad.feat"));
  };
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(write_and_read(bad_magic), FormatError);
  auto bad_version = bytes;
  bad_version[8] = 9;
  CHECK_THROWS_AS(write_and_read(bad_version), FormatError);
  auto truncated = bytes;
  truncated.pop_back();
  CHECK_THROWS_AS(write_and_read(truncated), FormatError);
  auto trailing = bytes;
  trailing.push_back(0);
  CHECK_THROWS_AS(write_and_read(trailing), FormatError);
  auto nan = bytes;
  const double q = std::numeric_limits<double>::quiet_NaN();
  std::memcpy(nan.data() + 17, &q, 8);
  CHECK_THROWS_AS(write_and_read(nan), FormatError);
  CHECK_THROWS_AS(read_feature_file(tmp("aped_missing_file.feat")), Error);
}

TEST_CASE("feature matrix rejects non-finite values") {
  CHECK_THROWS_AS(FeatureMatrix(1, 1, {std::numeric_limits<double>::infinity()}), Error);
  CHECK_THROWS_AS(FeatureMatrix(1, 2, {1.0}), Error);
}
