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

/// @file core.hpp
/// @brief Image buffers, geometry and the error types shared by every stage.
///
/// Images are plain row-major buffers. Multi-channel images interleave
/// channels (RGBRGB...). All types are values: copy them freely, share them
/// read-only across threads.

#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace mitopipe {

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

enum class ErrorKind {
  invalid_input,
  invalid_config,
  out_of_bounds,
  degenerate_input,
  inference,
  protocol,
  io,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::invalid_input: return "invalid input";
    case ErrorKind::invalid_config: return "invalid config";
    case ErrorKind::out_of_bounds: return "out of bounds";
    case ErrorKind::degenerate_input: return "degenerate input";
    case ErrorKind::inference: return "inference error";
    case ErrorKind::protocol: return "protocol error";
    case ErrorKind::io: return "i/o error";
  }
  return "error";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// Raised by the framed predictor protocol; `offset` is the byte position
/// inside the offending frame.
class ProtocolError : public Error {
 public:
  ProtocolError(const std::string& what, std::size_t offset)
      : Error(ErrorKind::protocol,
              what + " (frame offset " + std::to_string(offset) + ")"),
        offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

// ---------------------------------------------------------------------------
// Geometry
// ---------------------------------------------------------------------------

/// Axis-aligned pixel window. The origin may be negative for patch windows
/// centered close to the image border; width and height are at least 1.
struct Rect {
  std::int64_t x0 = 0;
  std::int64_t y0 = 0;
  std::int64_t width = 1;
  std::int64_t height = 1;

  std::int64_t x1() const { return x0 + width; }
  std::int64_t y1() const { return y0 + height; }

  friend bool operator==(const Rect&, const Rect&) = default;
};

/// Mirror index about the border pixel (reflect-101): -1 -> 1, n -> n-2.
/// Periodic, so any integer maps into [0, n).
inline std::int64_t reflect_index(std::int64_t i, std::int64_t n) {
  if (n == 1) return 0;
  const std::int64_t period = 2 * (n - 1);
  std::int64_t m = i % period;
  if (m < 0) m += period;
  return m < n ? m : period - m;
}

// ---------------------------------------------------------------------------
// Images
// ---------------------------------------------------------------------------

/// Dense row-major image with `Channels` interleaved values per pixel.
template <typename T, int Channels>
class Image {
 public:
  using value_type = T;
  static constexpr int channels = Channels;

  Image() = default;

  Image(std::int64_t width, std::int64_t height, T fill = T{})
      : width_(width), height_(height) {
    if (width < 1 || height < 1) {
      throw Error(ErrorKind::invalid_input,
                  "image dimensions must be positive, got " +
                      std::to_string(width) + "x" + std::to_string(height));
    }
    data_.assign(static_cast<std::size_t>(width * height * Channels), fill);
  }

  Image(std::int64_t width, std::int64_t height, std::vector<T> data)
      : width_(width), height_(height), data_(std::move(data)) {
    if (width < 1 || height < 1) {
      throw Error(ErrorKind::invalid_input,
                  "image dimensions must be positive, got " +
                      std::to_string(width) + "x" + std::to_string(height));
    }
    if (data_.size() != static_cast<std::size_t>(width * height * Channels)) {
      throw Error(ErrorKind::invalid_input,
                  "image buffer holds " + std::to_string(data_.size()) +
                      " values, expected " +
                      std::to_string(width * height * Channels));
    }
  }

  std::int64_t width() const { return width_; }
  std::int64_t height() const { return height_; }
  std::size_t pixel_count() const {
    return static_cast<std::size_t>(width_ * height_);
  }
  bool empty() const { return data_.empty(); }

  std::span<const T> data() const { return data_; }
  std::span<T> data() { return data_; }
  const std::vector<T>& values() const { return data_; }

  T& at(std::int64_t x, std::int64_t y, int c = 0) {
    return data_[index(x, y, c)];
  }
  const T& at(std::int64_t x, std::int64_t y, int c = 0) const {
    return data_[index(x, y, c)];
  }

  /// Pointer-free view of one pixel's channels.
  std::span<const T, Channels> pixel(std::size_t i) const {
    return std::span<const T, Channels>(data_.data() + i * Channels, Channels);
  }
  std::span<T, Channels> pixel(std::size_t i) {
    return std::span<T, Channels>(data_.data() + i * Channels, Channels);
  }

  bool contains(std::int64_t x, std::int64_t y) const {
    return x >= 0 && y >= 0 && x < width_ && y < height_;
  }

  friend bool operator==(const Image&, const Image&) = default;

 private:
  std::size_t index(std::int64_t x, std::int64_t y, int c) const {
    return static_cast<std::size_t>((y * width_ + x) * Channels + c);
  }

  std::int64_t width_ = 0;
  std::int64_t height_ = 0;
  std::vector<T> data_;
};

using RgbImage = Image<std::uint8_t, 3>;
/// Optical density per channel, each value in [0, ln 256].
using OdImage = Image<double, 3>;
/// Per-pixel probability in [0, 1].
using ProbabilityMap = Image<double, 1>;
/// 1 = foreground, 0 = background.
using BinaryMask = Image<std::uint8_t, 1>;

template <typename ImageA, typename ImageB>
bool same_size(const ImageA& a, const ImageB& b) {
  return a.width() == b.width() && a.height() == b.height();
}

/// A candidate or final mitosis: sub-pixel center plus confidence.
struct Detection {
  double x = 0.0;  // column
  double y = 0.0;  // row
  double score = 0.0;

  friend bool operator==(const Detection&, const Detection&) = default;
};

/// Copy `window` out of `image`. With `reflect` set, pixels outside the image
/// are mirrored about the border (reflect-101); without it the window must
/// lie fully inside the image.
template <typename T, int C>
Image<T, C> crop(const Image<T, C>& image, const Rect& window, bool reflect) {
  if (window.width < 1 || window.height < 1) {
    throw Error(ErrorKind::invalid_input, "crop window must be at least 1x1");
  }
  const bool inside = window.x0 >= 0 && window.y0 >= 0 &&
                      window.x1() <= image.width() &&
                      window.y1() <= image.height();
  if (!inside && !reflect) {
    throw Error(ErrorKind::out_of_bounds,
                "crop window [" + std::to_string(window.x0) + "," +
                    std::to_string(window.y0) + " " +
                    std::to_string(window.width) + "x" +
                    std::to_string(window.height) + "] exceeds " +
                    std::to_string(image.width()) + "x" +
                    std::to_string(image.height()) + " image");
  }

  Image<T, C> out(window.width, window.height);
  std::vector<std::int64_t> src_x(static_cast<std::size_t>(window.width));
  for (std::int64_t i = 0; i < window.width; ++i) {
    src_x[static_cast<std::size_t>(i)] =
        reflect_index(window.x0 + i, image.width());
  }
  for (std::int64_t j = 0; j < window.height; ++j) {
    const std::int64_t sy = reflect_index(window.y0 + j, image.height());
    for (std::int64_t i = 0; i < window.width; ++i) {
      const std::int64_t sx = src_x[static_cast<std::size_t>(i)];
      for (int c = 0; c < C; ++c) out.at(i, j, c) = image.at(sx, sy, c);
    }
  }
  return out;
}

/// Write `patch` into `image` at `origin`, skipping pixels that fall outside.
template <typename T, int C>
void paste(Image<T, C>& image, const Image<T, C>& patch, std::int64_t x0,
           std::int64_t y0) {
  for (std::int64_t j = 0; j < patch.height(); ++j) {
    for (std::int64_t i = 0; i < patch.width(); ++i) {
      if (!image.contains(x0 + i, y0 + j)) continue;
      for (int c = 0; c < C; ++c) image.at(x0 + i, y0 + j, c) = patch.at(i, j, c);
    }
  }
}

/// Round half away from zero to the nearest integer pixel.
inline std::int64_t round_pixel(double v) {
  return static_cast<std::int64_t>(std::round(v));
}

}  // namespace mitopipe
