#pragma once

// Model file layout, all integers little-endian:
//
//   "GLNS"                         magic, 4 bytes
//   u32 format version             kModelFormatVersion
//   u32 architecture tag           1 bow-mlp, 2 text-cnn, 3 linear
//   u32 config count, u64 values   bow-mlp: input, hidden1, hidden2
//                                  text-cnn: length, vocab, dim, filters, width
//                                  linear: input
//   u32 tensor count, then per tensor:
//     u32 rank, u64 extents[rank], f64 values (IEEE-754 bit patterns)

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>
#include <vector>

#include "gradlens/error.hpp"
#include "gradlens/models.hpp"

namespace gradlens::models {

inline constexpr std::string_view kModelMagic = "GLNS";
inline constexpr std::uint32_t kModelFormatVersion = 1;

namespace detail {

class ByteWriter {
 public:
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void f64(double v) { put(std::bit_cast<std::uint64_t>(v), 8); }
  void raw(std::string_view s) { bytes_.append(s); }
  const std::string& bytes() const { return bytes_; }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) bytes_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  std::string bytes_;
};

class ByteReader {
 public:
  ByteReader(std::string_view bytes, std::string source)
      : bytes_(bytes), source_(std::move(source)) {}

  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::uint64_t u64() { return get(8); }
  double f64() { return std::bit_cast<double>(get(8)); }
  std::string_view raw(std::size_t n) {
    need(n);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool at_end() const { return pos_ == bytes_.size(); }
  std::size_t remaining() const { return bytes_.size() - pos_; }

  [[noreturn]] void corrupt(const std::string& why) const {
    throw CorruptFileError("corrupt model file " + source_ + ": " + why);
  }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) corrupt("unexpected end of file");
  }
  std::uint64_t get(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += static_cast<std::size_t>(n);
    return v;
  }

  std::string_view bytes_;
  std::string source_;
  std::size_t pos_ = 0;
};

inline std::vector<std::uint64_t> config_values(const Architecture& arch) {
  if (const auto* m = std::get_if<BowMlpConfig>(&arch)) {
    return {m->input_size, m->hidden_sizes.at(0), m->hidden_sizes.at(1)};
  }
  if (const auto* c = std::get_if<TextCnnConfig>(&arch)) {
    return {c->sequence_length, c->vocabulary_size, c->embedding_dim, c->filter_count,
            c->filter_width};
  }
  return {std::get<LinearConfig>(arch).input_size};
}

}  // namespace detail

inline std::string serialize_model(const TrainedModel& model) {
  check_parameters(model);
  detail::ByteWriter w;
  w.raw(kModelMagic);
  w.u32(kModelFormatVersion);
  w.u32(static_cast<std::uint32_t>(model.architecture.index() + 1));
  const auto config = detail::config_values(model.architecture);
  w.u32(static_cast<std::uint32_t>(config.size()));
  for (auto v : config) w.u64(v);
  w.u32(static_cast<std::uint32_t>(model.parameters.size()));
  for (const auto& t : model.parameters) {
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (auto e : t.shape()) w.u64(e);
    for (double v : t.data()) w.f64(v);
  }
  return w.bytes();
}

inline TrainedModel deserialize_model(std::string_view bytes,
                                      const std::string& source = "<memory>") {
  detail::ByteReader r(bytes, source);
  if (r.remaining() < kModelMagic.size() || r.raw(kModelMagic.size()) != kModelMagic) {
    r.corrupt("bad magic");
  }
  const std::uint32_t version = r.u32();
  if (version != kModelFormatVersion) {
    throw VersionMismatchError("model file " + source + " has format version " +
                               std::to_string(version) + ", expected " +
                               std::to_string(kModelFormatVersion));
  }
  const std::uint32_t tag = r.u32();
  const std::uint32_t n_config = r.u32();
  if (n_config > 16) r.corrupt("implausible config count");
  std::vector<std::uint64_t> cfg(n_config);
  for (auto& v : cfg) v = r.u64();

  TrainedModel model;
  auto expect = [&](std::size_t n) {
    if (cfg.size() != n) r.corrupt("wrong config count for architecture tag");
  };
  switch (tag) {
    case 1:
      expect(3);
      model.architecture = BowMlpConfig{cfg[0], {cfg[1], cfg[2]}};
      break;
    case 2:
      expect(5);
      model.architecture = TextCnnConfig{cfg[0], cfg[1], cfg[2], cfg[3], cfg[4]};
      break;
    case 3:
      expect(1);
      model.architecture = LinearConfig{cfg[0]};
      break;
    default:
      r.corrupt("unknown architecture tag " + std::to_string(tag));
  }
  std::vector<Shape> shapes;
  try {
    shapes = parameter_shapes(model.architecture);
  } catch (const ConfigError& e) {
    r.corrupt(e.what());
  }

  const std::uint32_t n_tensors = r.u32();
  if (n_tensors != shapes.size()) r.corrupt("wrong tensor count");
  for (std::uint32_t i = 0; i < n_tensors; ++i) {
    const std::uint32_t rank = r.u32();
    if (rank != shapes[i].size()) r.corrupt("tensor " + std::to_string(i) + " has wrong rank");
    Shape shape(rank);
    for (auto& e : shape) e = r.u64();
    if (shape != shapes[i]) {
      r.corrupt("tensor " + std::to_string(i) + " has shape " + shape_string(shape) +
                ", expected " + shape_string(shapes[i]));
    }
    const std::size_t count = shape_size(shape);
    if (r.remaining() / 8 < count) r.corrupt("unexpected end of file");
    std::vector<double> values(count);
    for (auto& v : values) v = r.f64();
    model.parameters.emplace_back(std::move(shape), std::move(values));
  }
  if (!r.at_end()) r.corrupt("trailing bytes after last tensor");
  return model;
}

inline void save_model(const TrainedModel& model, const std::filesystem::path& path) {
  const std::string bytes = serialize_model(model);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write model file " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("failed writing model file " + path.string());
}

inline TrainedModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read model file " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_model(bytes, path.string());
}

}  // namespace gradlens::models
