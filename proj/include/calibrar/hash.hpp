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

#ifndef CALIBRAR_HASH_HPP_
#define CALIBRAR_HASH_HPP_

#include <charconv>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>

#include "calibrar/error.hpp"

namespace calibrar {

// 64-bit FNV-1a. Used to fingerprint configs, checkpoints and attack settings.
class Fnv1a64 {
 public:
  Fnv1a64& update(std::span<const unsigned char> bytes) {
    for (unsigned char b : bytes) {
      state_ ^= b;
      state_ *= 0x100000001b3ULL;
    }
    return *this;
  }
  Fnv1a64& update(std::string_view text) {
    return update(std::span<const unsigned char>(
        reinterpret_cast<const unsigned char*>(text.data()), text.size()));
  }
  std::uint64_t digest() const { return state_; }

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

inline std::uint64_t fnv1a64(std::string_view text) { return Fnv1a64().update(text).digest(); }

inline std::string hex64(std::uint64_t v) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = kDigits[v & 0xf];
    v >>= 4;
  }
  return out;
}

inline std::uint64_t parse_hex64(std::string_view text) {
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v, 16);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw FormatError("bad hex value '" + std::string(text) + "'");
  }
  return v;
}

}  // namespace calibrar

#endif  // CALIBRAR_HASH_HPP_
