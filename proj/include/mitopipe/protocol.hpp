// Copyright 2026 The mitopipe Authors. All Rights Reserved.
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

/// @file protocol.hpp
/// @brief Binary frames exchanged with external model processes.
///
/// All integers and floats are little-endian.
///
///   request       "MPR1" | kind u8 (1 seg, 2 cls) | 3 x 0 | width u32 | height u32
///                 | width*height*3 bytes RGB, row-major
///   seg response  "MPS1" | status u8 | 3 x 0 | width u32 | height u32
///                 | width*height float32, row-major
///   cls response  "MPC1" | status u8 | 3 x 0 | score float32
///   error         <seg or cls magic> | status != 0 | 3 x 0 | length u32 | UTF-8 message
///
/// A frame is validated as it is read; violations raise ProtocolError with
/// the byte offset inside the frame.

#pragma once

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mitopipe/core.hpp"

namespace mitopipe::protocol {

inline constexpr std::array<char, 4> kRequestMagic{'M', 'P', 'R', '1'};
inline constexpr std::array<char, 4> kSegMagic{'M', 'P', 'S', '1'};
inline constexpr std::array<char, 4> kClsMagic{'M', 'P', 'C', '1'};
inline constexpr std::size_t kHeaderSize = 16;
inline constexpr std::uint32_t kMaxSide = 1u << 15;
inline constexpr std::uint32_t kMaxMessage = 1u << 16;

enum class Kind : std::uint8_t { seg = 1, cls = 2 };

/// Bytes on the wire for a request carrying a `width` x `height` image.
constexpr std::size_t request_size(std::uint32_t width, std::uint32_t height) {
  return kHeaderSize + std::size_t{3} * width * height;
}

/// Blocking byte stream with a per-call deadline.
class Channel {
 public:
  virtual ~Channel() = default;
  virtual void write_all(std::span<const std::uint8_t> bytes) = 0;
  /// Fill `out` completely or throw (inference error on EOF / timeout).
  virtual void read_exact(std::span<std::uint8_t> out) = 0;
};

namespace detail {

inline void put_u32(std::vector<std::uint8_t>& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline std::uint32_t get_u32(std::span<const std::uint8_t> b, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[at + static_cast<std::size_t>(i)]) << (8 * i);
  return v;
}

inline void put_f32(std::vector<std::uint8_t>& buf, float f) { put_u32(buf, std::bit_cast<std::uint32_t>(f)); }

inline float get_f32(std::span<const std::uint8_t> b, std::size_t at) {
  return std::bit_cast<float>(get_u32(b, at));
}

inline void put_magic(std::vector<std::uint8_t>& buf, const std::array<char, 4>& magic) {
  for (char c : magic) buf.push_back(static_cast<std::uint8_t>(c));
}

inline void expect_magic(std::span<const std::uint8_t> b, const std::array<char, 4>& magic) {
  for (std::size_t i = 0; i < 4; ++i) {
    if (b[i] != static_cast<std::uint8_t>(magic[i])) {
      throw ProtocolError("bad magic, expected \"" + std::string(magic.data(), 4) + "\"", i);
    }
  }
}

inline void expect_reserved(std::span<const std::uint8_t> b) {
  for (std::size_t i = 5; i < 8; ++i) {
    if (b[i] != 0) throw ProtocolError("reserved byte is not zero", i);
  }
}

inline void check_side(std::uint32_t v, std::size_t offset) {
  if (v == 0 || v > kMaxSide) {
    throw ProtocolError("image side " + std::to_string(v) + " out of range", offset);
  }
}

/// Reads the message of an error frame whose first 8 bytes are in `head`.
[[noreturn]] inline void read_error(Channel& ch, std::span<const std::uint8_t> head) {
  std::array<std::uint8_t, 4> len{};
  ch.read_exact(len);
  const auto n = get_u32(len, 0);
  if (n > kMaxMessage) throw ProtocolError("error message too long", 8);
  std::string msg(n, '\0');
  if (n > 0) ch.read_exact(std::span<std::uint8_t>(reinterpret_cast<std::uint8_t*>(msg.data()), n));
  throw Error(ErrorKind::inference,
              "model reported status " + std::to_string(head[4]) + ": " + msg);
}

}  // namespace detail

inline std::vector<std::uint8_t> encode_request(Kind kind, const RgbImage& image) {
  std::vector<std::uint8_t> buf;
  const auto w = static_cast<std::uint32_t>(image.width());
  const auto h = static_cast<std::uint32_t>(image.height());
  buf.reserve(request_size(w, h));
  detail::put_magic(buf, kRequestMagic);
  buf.push_back(static_cast<std::uint8_t>(kind));
  buf.insert(buf.end(), 3, 0);
  detail::put_u32(buf, w);
  detail::put_u32(buf, h);
  buf.insert(buf.end(), image.data().begin(), image.data().end());
  return buf;
}

inline std::vector<std::uint8_t> encode_seg_response(const ProbabilityMap& map) {
  std::vector<std::uint8_t> buf;
  buf.reserve(kHeaderSize + 4 * map.pixel_count());
  detail::put_magic(buf, kSegMagic);
  buf.insert(buf.end(), 4, 0);
  detail::put_u32(buf, static_cast<std::uint32_t>(map.width()));
  detail::put_u32(buf, static_cast<std::uint32_t>(map.height()));
  for (double v : map.data()) detail::put_f32(buf, static_cast<float>(v));
  return buf;
}

inline std::vector<std::uint8_t> encode_cls_response(double score) {
  std::vector<std::uint8_t> buf;
  detail::put_magic(buf, kClsMagic);
  buf.insert(buf.end(), 4, 0);
  detail::put_f32(buf, static_cast<float>(score));
  return buf;
}

inline std::vector<std::uint8_t> encode_error_response(Kind kind, std::uint8_t status,
                                                       std::string_view message) {
  std::vector<std::uint8_t> buf;
  detail::put_magic(buf, kind == Kind::seg ? kSegMagic : kClsMagic);
  buf.push_back(status == 0 ? 1 : status);
  buf.insert(buf.end(), 3, 0);
  detail::put_u32(buf, static_cast<std::uint32_t>(message.size()));
  buf.insert(buf.end(), message.begin(), message.end());
  return buf;
}

struct Request {
  Kind kind = Kind::seg;
  RgbImage image;
};

/// Server side: read and validate one request frame.
inline Request read_request(Channel& ch) {
  std::array<std::uint8_t, kHeaderSize> head{};
  ch.read_exact(head);
  detail::expect_magic(head, kRequestMagic);
  if (head[4] != 1 && head[4] != 2) throw ProtocolError("unknown request kind", 4);
  detail::expect_reserved(head);
  const auto w = detail::get_u32(head, 8);
  const auto h = detail::get_u32(head, 12);
  detail::check_side(w, 8);
  detail::check_side(h, 12);
  std::vector<std::uint8_t> payload(std::size_t{3} * w * h);
  ch.read_exact(payload);
  return Request{static_cast<Kind>(head[4]), RgbImage(w, h, std::move(payload))};
}

/// Client side: read a segmentation response for a `width` x `height` request.
inline ProbabilityMap read_seg_response(Channel& ch, std::int64_t width, std::int64_t height) {
  std::array<std::uint8_t, 8> head{};
  ch.read_exact(head);
  detail::expect_magic(head, kSegMagic);
  detail::expect_reserved(head);
  if (head[4] != 0) detail::read_error(ch, head);
  std::array<std::uint8_t, 8> dims{};
  ch.read_exact(dims);
  const auto w = detail::get_u32(dims, 0);
  const auto h = detail::get_u32(dims, 4);
  if (w != width) throw ProtocolError("response width " + std::to_string(w) + " != request", 8);
  if (h != height) throw ProtocolError("response height " + std::to_string(h) + " != request", 12);
  std::vector<std::uint8_t> payload(std::size_t{4} * w * h);
  ch.read_exact(payload);
  ProbabilityMap map(width, height);
  for (std::size_t i = 0; i < map.pixel_count(); ++i) {
    const float v = detail::get_f32(payload, 4 * i);
    if (!(v >= 0.0f && v <= 1.0f)) {
      throw ProtocolError("probability outside [0,1]", kHeaderSize + 4 * i);
    }
    map.data()[i] = static_cast<double>(v);
  }
  return map;
}

inline double read_cls_response(Channel& ch) {
  std::array<std::uint8_t, 8> head{};
  ch.read_exact(head);
  detail::expect_magic(head, kClsMagic);
  detail::expect_reserved(head);
  if (head[4] != 0) detail::read_error(ch, head);
  std::array<std::uint8_t, 4> body{};
  ch.read_exact(body);
  const float v = detail::get_f32(body, 0);
  if (!(v >= 0.0f && v <= 1.0f)) throw ProtocolError("score outside [0,1]", 8);
  return static_cast<double>(v);
}

}  // namespace mitopipe::protocol
