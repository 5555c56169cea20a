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

/// @file image_io.hpp
/// @brief 8-bit PNG reading and writing via libpng.
///
/// RGB images load from any PNG color type (palette and gray expand, alpha
/// and 16-bit depth are dropped). Masks are single-channel: nonzero reads as
/// foreground and foreground writes as 255.

#pragma once

#include <png.h>

#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include "mitopipe/core.hpp"

namespace mitopipe::io {

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

[[noreturn]] inline void png_fail(png_structp png, png_const_charp msg) {
  auto* err = static_cast<std::string*>(png_get_error_ptr(png));
  if (err) *err = msg;
  png_longjmp(png, 1);
}

inline void png_warn(png_structp, png_const_charp) {}

/// Reads `path` into 8-bit rows with `channels` (1 or 3) per pixel.
inline std::vector<std::uint8_t> read_png(const std::string& path, int channels, std::int64_t& width,
                                          std::int64_t& height) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw Error(ErrorKind::io, "cannot open " + path);
  png_byte sig[8];
  if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    throw Error(ErrorKind::invalid_input, path + " is not a PNG file");
  }
  std::string err;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &err, png_fail, png_warn);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw Error(ErrorKind::io, "libpng initialization failed");
  }
  std::vector<std::uint8_t> data;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error(ErrorKind::invalid_input, "cannot decode " + path + ": " + err);
  }
  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const png_uint_32 w = png_get_image_width(png, info);
  const png_uint_32 h = png_get_image_height(png, info);
  const int color = png_get_color_type(png, info);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_packing(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
  const bool is_gray = (color & PNG_COLOR_MASK_COLOR) == 0;
  if (channels == 3 && is_gray) png_set_gray_to_rgb(png);
  if (channels == 1 && !is_gray) png_set_rgb_to_gray_fixed(png, 1, -1, -1);
  png_read_update_info(png, info);
  if (png_get_channels(png, info) != channels) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error(ErrorKind::invalid_input, path + ": unsupported PNG layout");
  }
  data.resize(static_cast<std::size_t>(w) * h * static_cast<std::size_t>(channels));
  rows.resize(h);
  for (png_uint_32 y = 0; y < h; ++y) rows[y] = data.data() + static_cast<std::size_t>(y) * w * channels;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  width = w;
  height = h;
  return data;
}

inline void write_png(const std::string& path, const std::uint8_t* data, std::int64_t width, std::int64_t height,
                      int channels) {
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw Error(ErrorKind::io, "cannot create " + path);
  std::string err;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &err, png_fail, png_warn);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw Error(ErrorKind::io, "libpng initialization failed");
  }
  std::vector<png_bytep> rows(static_cast<std::size_t>(height));
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error(ErrorKind::io, "cannot encode " + path + ": " + err);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8,
               channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::int64_t y = 0; y < height; ++y) {
    rows[static_cast<std::size_t>(y)] = const_cast<png_bytep>(data + y * width * channels);
  }
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  if (std::fflush(fp.get()) != 0) throw Error(ErrorKind::io, "cannot write " + path);
}

}  // namespace detail

inline RgbImage read_rgb(const std::string& path) {
  std::int64_t w = 0, h = 0;
  auto data = detail::read_png(path, 3, w, h);
  return RgbImage(w, h, std::move(data));
}

inline void write_rgb(const std::string& path, const RgbImage& img) {
  detail::write_png(path, img.data().data(), img.width(), img.height(), 3);
}

inline BinaryMask read_mask(const std::string& path) {
  std::int64_t w = 0, h = 0;
  auto data = detail::read_png(path, 1, w, h);
  for (auto& v : data) v = v ? 1 : 0;
  return BinaryMask(w, h, std::move(data));
}

inline void write_mask(const std::string& path, const BinaryMask& mask) {
  std::vector<std::uint8_t> bytes(mask.data().begin(), mask.data().end());
  for (auto& v : bytes) v = v ? 255 : 0;
  detail::write_png(path, bytes.data(), mask.width(), mask.height(), 1);
}

}  // namespace mitopipe::io
