#include "gradlens/model_io.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <string>

namespace gradlens::models {
namespace {

namespace fs = std::filesystem;

fs::path temp_file(const std::string& name) {
  return fs::temp_directory_path() /
         (name + "_" + std::to_string(std::random_device{}()) + ".glns");
}

TEST(ModelFile, HeaderLayout) {
  const auto bytes = serialize_model(build_linear({1.0, 2.0}, 0.5));
  ASSERT_GE(bytes.size(), 16u);
  EXPECT_EQ(bytes.substr(0, 4), "GLNS");
  EXPECT_EQ(bytes.substr(4, 4), std::string("\x01\x00\x00\x00", 4));  // version
  EXPECT_EQ(bytes.substr(8, 4), std::string("\x03\x00\x00\x00", 4));  // linear tag
  // magic, version, tag, config count + 1 value, tensor count,
  // W: rank + 2 extents + 2 values, b: rank + 1 extent + 1 value
  EXPECT_EQ(bytes.size(), 4 + 4 + 4 + 4 + 8 + 4 + (4 + 16 + 16) + (4 + 8 + 8));
}

TEST(ModelFile, BowRoundTripPredictsBitIdentically) {
  auto m = build_bow_mlp({80, {12, 6}}, 3);
  const fs::path path = temp_file("bow");
  save_model(m, path);
  const auto loaded = load_model(path);
  fs::remove(path);
  EXPECT_EQ(loaded.architecture, m.architecture);
  EXPECT_EQ(loaded.parameters, m.parameters);
  std::mt19937_64 gen(1);
  for (int i = 0; i < 100; ++i) {
    text::BowVector x{80, {}};
    for (std::size_t d = 0; d < 80; ++d) {
      if (gen() % 4 == 0) x.active.push_back(d);
    }
    EXPECT_EQ(predict(loaded, x).score, predict(m, x).score);
  }
}

TEST(ModelFile, CnnRoundTripPredictsBitIdentically) {
  const auto m = build_text_cnn({10, 30, 4, 5, 3}, 4);
  const auto loaded = deserialize_model(serialize_model(m));
  EXPECT_EQ(loaded.architecture, m.architecture);
  std::mt19937_64 gen(2);
  for (int i = 0; i < 100; ++i) {
    text::TokenSequence seq{std::vector<std::size_t>(10), 10};
    for (auto& id : seq.ids) id = gen() % 30;
    EXPECT_EQ(predict(loaded, seq).score, predict(m, seq).score);
  }
}

TEST(ModelFile, TruncatedFileIsCorrupt) {
  const auto bytes = serialize_model(build_bow_mlp({20, {4, 3}}, 1));
  for (std::size_t cut : {std::size_t{0}, std::size_t{3}, std::size_t{10}, bytes.size() / 2,
                          bytes.size() - 1}) {
    EXPECT_THROW(deserialize_model(bytes.substr(0, cut)), CorruptFileError) << cut;
  }
}

TEST(ModelFile, TruncatedFileOnDisk) {
  const fs::path path = temp_file("trunc");
  const auto bytes = serialize_model(build_bow_mlp({20, {4, 3}}, 1));
  std::ofstream(path, std::ios::binary) << bytes.substr(0, bytes.size() - 9);
  EXPECT_THROW(load_model(path), CorruptFileError);
  fs::remove(path);
}

TEST(ModelFile, BumpedVersionIsAVersionMismatch) {
  auto bytes = serialize_model(build_linear({1.0}, 0.0));
  bytes[4] = 2;
  EXPECT_THROW(deserialize_model(bytes), VersionMismatchError);
}

TEST(ModelFile, OtherCorruption) {
  auto bytes = serialize_model(build_linear({1.0}, 0.0));
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(deserialize_model(bad_magic), CorruptFileError);
  auto bad_tag = bytes;
  bad_tag[8] = 9;
  EXPECT_THROW(deserialize_model(bad_tag), CorruptFileError);
  EXPECT_THROW(deserialize_model(bytes + "x"), CorruptFileError);
  EXPECT_THROW(load_model(temp_file("missing")), DataError);
}

}  // namespace
}  // namespace gradlens::models
