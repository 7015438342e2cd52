// Copyright 2026 The Calibrar Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef CALIBRAR_CHECKPOINT_IO_HPP_
#define CALIBRAR_CHECKPOINT_IO_HPP_

#include <array>
#include <bit>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>
#include <vector>

#include "calibrar/error.hpp"
#include "calibrar/hash.hpp"
#include "calibrar/mlp.hpp"

namespace calibrar {

// Binary checkpoint container, version 1. All integers are unsigned
// little-endian, reals are IEEE-754 binary64 little-endian.
//
//   bytes  "CALBCKPT"
//   u32    format version (1)
//   u32    activation (0 = relu)
//   u64    init seed
//   u64    L, then L x u64 layer sizes
//   u64    epoch
//   u64    config hash
//   u64    P parameter arrays, each: u64 rank, rank x u64 dims, f64 values
//   u8     smoothing present (0/1); if 1:
//          u64 R, u64 Z, f64 alpha, u64 epoch, R x f64 correct mass, R x f64 epsilon
inline constexpr std::string_view kCheckpointMagic = "CALBCKPT";
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

class ByteWriter {
 public:
  void bytes(std::string_view s) { out_.insert(out_.end(), s.begin(), s.end()); }
  void u8(std::uint8_t v) { out_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) { little_endian(v); }
  void u64(std::uint64_t v) { little_endian(v); }
  void f64(double v) { little_endian(std::bit_cast<std::uint64_t>(v)); }
  std::vector<char> take() { return std::move(out_); }

 private:
  template <typename U>
  void little_endian(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      out_.push_back(static_cast<char>(static_cast<unsigned char>(v >> (8 * i))));
    }
  }
  std::vector<char> out_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const char> in) : in_(in) {}
  std::string_view bytes(std::size_t n) {
    need(n);
    std::string_view s(in_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  std::uint8_t u8() { return static_cast<std::uint8_t>(little_endian<std::uint8_t>()); }
  std::uint32_t u32() { return little_endian<std::uint32_t>(); }
  std::uint64_t u64() { return little_endian<std::uint64_t>(); }
  double f64() { return std::bit_cast<double>(little_endian<std::uint64_t>()); }
  bool done() const { return pos_ == in_.size(); }

  // Guards length fields before allocation.
  std::size_t count(std::uint64_t n, std::size_t element_size) {
    if (n > (in_.size() - pos_) / element_size) throw FormatError("checkpoint: truncated data");
    return static_cast<std::size_t>(n);
  }

 private:
  void need(std::size_t n) {
    if (in_.size() - pos_ < n) throw FormatError("checkpoint: truncated data");
  }
  template <typename U>
  U little_endian() {
    need(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      v |= static_cast<U>(static_cast<U>(static_cast<unsigned char>(in_[pos_ + i])) << (8 * i));
    }
    pos_ += sizeof(U);
    return v;
  }
  std::span<const char> in_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<char> serialize(const Checkpoint& ckpt) {
  ckpt.validate();
  detail::ByteWriter w;
  w.bytes(kCheckpointMagic);
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(ckpt.spec.activation));
  w.u64(ckpt.spec.seed);
  w.u64(ckpt.spec.layer_sizes.size());
  for (std::size_t s : ckpt.spec.layer_sizes) w.u64(s);
  w.u64(ckpt.epoch);
  w.u64(ckpt.config_hash);
  w.u64(ckpt.params.size());
  for (const NumArray& p : ckpt.params) {
    w.u64(p.rank());
    for (std::size_t dim : p.shape()) w.u64(dim);
    for (double v : p.values()) w.f64(v);
  }
  w.u8(ckpt.smoothing ? 1 : 0);
  if (ckpt.smoothing) {
    const SmoothingState& s = *ckpt.smoothing;
    w.u64(s.num_subsets);
    w.u64(s.num_classes);
    w.f64(s.alpha);
    w.u64(s.epoch);
    for (double v : s.correct_mass) w.f64(v);
    for (double v : s.epsilon) w.f64(v);
  }
  return w.take();
}

inline Checkpoint deserialize(std::span<const char> bytes) {
  detail::ByteReader r(bytes);
  if (r.bytes(kCheckpointMagic.size()) != kCheckpointMagic) {
    throw FormatError("checkpoint: bad magic");
  }
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  }
  Checkpoint ckpt;
  const std::uint32_t activation = r.u32();
  if (activation != static_cast<std::uint32_t>(Activation::relu)) {
    throw FormatError("checkpoint: unknown activation " + std::to_string(activation));
  }
  ckpt.spec.activation = Activation::relu;
  ckpt.spec.seed = r.u64();
  ckpt.spec.layer_sizes.resize(r.count(r.u64(), 8));
  for (std::size_t& s : ckpt.spec.layer_sizes) s = static_cast<std::size_t>(r.u64());
  ckpt.epoch = r.u64();
  ckpt.config_hash = r.u64();
  const std::size_t num_params = r.count(r.u64(), 8);
  for (std::size_t k = 0; k < num_params; ++k) {
    std::vector<std::size_t> shape(r.count(r.u64(), 8));
    for (std::size_t& dim : shape) dim = static_cast<std::size_t>(r.u64());
    std::vector<double> values(r.count(NumArray::element_count(shape), 8));
    for (double& v : values) v = r.f64();
    ckpt.params.emplace_back(std::move(shape), std::move(values));
  }
  const std::uint8_t has_smoothing = r.u8();
  if (has_smoothing > 1) throw FormatError("checkpoint: bad smoothing flag");
  if (has_smoothing) {
    SmoothingState s;
    s.num_subsets = static_cast<std::size_t>(r.u64());
    s.num_classes = static_cast<std::size_t>(r.u64());
    s.alpha = r.f64();
    s.epoch = static_cast<std::size_t>(r.u64());
    s.correct_mass.resize(r.count(s.num_subsets, 16));
    for (double& v : s.correct_mass) v = r.f64();
    s.epsilon.resize(s.num_subsets);
    for (double& v : s.epsilon) v = r.f64();
    ckpt.smoothing = std::move(s);
  }
  if (!r.done()) throw FormatError("checkpoint: trailing bytes");
  ckpt.validate();
  return ckpt;
}

inline std::uint64_t checkpoint_hash(const Checkpoint& ckpt) {
  const auto bytes = serialize(ckpt);
  return Fnv1a64()
      .update(std::span<const unsigned char>(reinterpret_cast<const unsigned char*>(bytes.data()),
                                             bytes.size()))
      .digest();
}

inline void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  const auto bytes = serialize(ckpt);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("save_checkpoint: cannot write " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("save_checkpoint: write failed for " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("load_checkpoint: cannot open " + path);
  const std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return deserialize(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path + ": " + e.what());
  }
}

}  // namespace calibrar

#endif  // CALIBRAR_CHECKPOINT_IO_HPP_
