// Copyright 2026 The sroute Authors.
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

#pragma once

// Versioned binary checkpoint:
//
//   magic "SRTCKPT\0" | u32 version | u32 len + config text |
//   u32 count | count x (u32 len + name | u32 rank | rank x u64 dim | f32 data)
//
// All integers and floats are little-endian.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>

#include "sroute/config.hpp"
#include "sroute/errors.hpp"
#include "sroute/model.hpp"

namespace sroute {

inline constexpr std::array<char, 8> kCheckpointMagic = {'S', 'R', 'T', 'C', 'K', 'P', 'T', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

template <typename U>
void write_le(std::ostream& out, U value) {
  static_assert(std::is_unsigned_v<U>);
  for (std::size_t i = 0; i < sizeof(U); ++i) out.put(static_cast<char>((value >> (8 * i)) & 0xFF));
}

template <typename U>
U read_le(std::istream& in) {
  static_assert(std::is_unsigned_v<U>);
  U value = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    const int c = in.get();
    if (c == std::char_traits<char>::eof()) throw InputError("checkpoint: unexpected end of file");
    value |= static_cast<U>(static_cast<unsigned char>(c)) << (8 * i);
  }
  return value;
}

inline void write_string(std::ostream& out, const std::string& s) {
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& in, std::size_t limit) {
  const auto n = read_le<std::uint32_t>(in);
  if (n > limit) throw InputError("checkpoint: string length " + std::to_string(n) + " is implausible");
  std::string s(n, '\0');
  in.read(s.data(), n);
  if (!in) throw InputError("checkpoint: unexpected end of file");
  return s;
}

}  // namespace detail

inline void write_checkpoint(std::ostream& out, const Model<float>& model) {
  out.write(kCheckpointMagic.data(), kCheckpointMagic.size());
  detail::write_le<std::uint32_t>(out, kCheckpointVersion);
  detail::write_string(out, model.config().to_text());
  const auto params = model.parameters();
  detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    detail::write_string(out, p.name);
    detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(p.tensor.rank()));
    for (auto dim : p.tensor.shape()) detail::write_le<std::uint64_t>(out, dim);
    for (float v : p.tensor.data()) detail::write_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
  }
  if (!out) throw InputError("checkpoint: write failed");
}

inline Model<float> read_checkpoint(std::istream& in) {
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kCheckpointMagic) throw InputError("checkpoint: bad magic");
  const auto version = detail::read_le<std::uint32_t>(in);
  if (version != kCheckpointVersion) throw InputError("checkpoint: unsupported version " + std::to_string(version));
  ModelConfig cfg;
  cfg.apply_text(detail::read_string(in, 1 << 20));
  Model<float> model(cfg);
  auto params = model.parameters();
  const auto count = detail::read_le<std::uint32_t>(in);
  if (count != params.size()) {
    throw InputError("checkpoint: " + std::to_string(count) + " arrays, model expects " + std::to_string(params.size()));
  }
  for (auto& p : params) {
    const auto name = detail::read_string(in, 4096);
    if (name != p.name) throw InputError("checkpoint: expected array '" + p.name + "', found '" + name + "'");
    const auto rank = detail::read_le<std::uint32_t>(in);
    Shape shape(rank);
    for (auto& dim : shape) dim = detail::read_le<std::uint64_t>(in);
    if (shape != p.tensor.shape()) {
      throw InputError("checkpoint: array '" + name + "' has shape " + shape_str(shape) + ", expected " +
                       shape_str(p.tensor.shape()));
    }
    for (float& v : p.tensor.data()) v = std::bit_cast<float>(detail::read_le<std::uint32_t>(in));
  }
  return model;
}

inline void save_checkpoint(const Model<float>& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write checkpoint '" + path + "'");
  write_checkpoint(out, model);
}

inline Model<float> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open checkpoint '" + path + "'");
  return read_checkpoint(in);
}

}  // namespace sroute
