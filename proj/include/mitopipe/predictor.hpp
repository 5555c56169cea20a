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

/// @file predictor.hpp
/// @brief Segmentation / classification predictor interfaces, test-time
/// augmentation and ensemble averaging.
///
/// An ensemble averages, in probability space, the outputs of every
/// (member, transform) pair. Flip transforms are undone on the predicted map
/// before averaging; sharpening perturbs the input only and its map is taken
/// as is.
///
/// Predictors receive a TileContext naming the window (in image coordinates)
/// the input was cut from and the transform applied to it. Real models ignore
/// it; the oracle predictors here use it to look up ground truth.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mitopipe/core.hpp"
#include "mitopipe/rng.hpp"

namespace mitopipe::predict {

enum class Tta { identity, hflip, vflip, hvflip, sharpen };

inline constexpr std::array<Tta, 5> kAllTta{Tta::identity, Tta::hflip, Tta::vflip, Tta::hvflip,
                                            Tta::sharpen};

inline std::string_view to_string(Tta t) {
  switch (t) {
    case Tta::identity: return "identity";
    case Tta::hflip: return "hflip";
    case Tta::vflip: return "vflip";
    case Tta::hvflip: return "hvflip";
    case Tta::sharpen: return "sharpen";
  }
  return "?";
}

inline std::optional<Tta> parse_tta(std::string_view s) {
  for (Tta t : kAllTta) {
    if (to_string(t) == s) return t;
  }
  return std::nullopt;
}

template <typename T, int C>
Image<T, C> flip(const Image<T, C>& src, bool horizontal, bool vertical) {
  Image<T, C> out(src.width(), src.height());
  const auto w = src.width(), h = src.height();
  for (std::int64_t y = 0; y < h; ++y) {
    const auto sy = vertical ? h - 1 - y : y;
    for (std::int64_t x = 0; x < w; ++x) {
      const auto sx = horizontal ? w - 1 - x : x;
      for (int c = 0; c < C; ++c) out.at(x, y, c) = src.at(sx, sy, c);
    }
  }
  return out;
}

/// Unsharp mask, amount 1: out = clamp(img + (img - box3x3(img))), borders
/// reflected.
inline RgbImage sharpen(const RgbImage& img) {
  RgbImage out(img.width(), img.height());
  const auto w = img.width(), h = img.height();
  const std::uint8_t* src = img.data().data();
  std::uint8_t* dst = out.data().data();
  for (std::int64_t y = 0; y < h; ++y) {
    const std::uint8_t* rows[3] = {src + reflect_index(y - 1, h) * w * 3, src + y * w * 3,
                                   src + reflect_index(y + 1, h) * w * 3};
    for (std::int64_t x = 0; x < w; ++x) {
      const std::int64_t cols[3] = {reflect_index(x - 1, w) * 3, x * 3, reflect_index(x + 1, w) * 3};
      for (int c = 0; c < 3; ++c) {
        int sum = 0;
        for (const auto* row : rows)
          for (auto col : cols) sum += row[col + c];
        const double blur = sum / 9.0;
        const double v = 2.0 * rows[1][x * 3 + c] - blur;
        dst[(y * w + x) * 3 + c] = static_cast<std::uint8_t>(std::clamp(std::round(v), 0.0, 255.0));
      }
    }
  }
  return out;
}

inline RgbImage apply_tta(Tta t, const RgbImage& img) {
  switch (t) {
    case Tta::identity: return img;
    case Tta::hflip: return flip(img, true, false);
    case Tta::vflip: return flip(img, false, true);
    case Tta::hvflip: return flip(img, true, true);
    case Tta::sharpen: return sharpen(img);
  }
  return img;
}

/// Geometric transform of a map (the forward geometry of `t`; sharpen is
/// identity). Flips are involutions, so this is also the inverse.
template <typename T, int C>
Image<T, C> transform_geometry(Tta t, const Image<T, C>& m) {
  switch (t) {
    case Tta::hflip: return flip(m, true, false);
    case Tta::vflip: return flip(m, false, true);
    case Tta::hvflip: return flip(m, true, true);
    case Tta::identity:
    case Tta::sharpen: return m;
  }
  return m;
}

inline ProbabilityMap inverse_map(Tta t, const ProbabilityMap& m) { return transform_geometry(t, m); }

struct TileContext {
  Rect window{};
  Tta transform = Tta::identity;
};

class SegPredictor {
 public:
  virtual ~SegPredictor() = default;
  /// Same-size probability map for `tile`.
  virtual ProbabilityMap predict(const RgbImage& tile, const TileContext& ctx) = 0;
  virtual std::string name() const = 0;
};

class ClsPredictor {
 public:
  virtual ~ClsPredictor() = default;
  /// Mitosis probability for a classifier patch.
  virtual double score(const RgbImage& patch, const TileContext& ctx) = 0;
  virtual std::string name() const = 0;
};

template <typename Predictor>
struct Ensemble {
  std::vector<std::unique_ptr<Predictor>> members;
  std::vector<Tta> tta{Tta::identity};
};

namespace detail {

[[noreturn]] inline void member_failed(std::string_view role, const std::string& member,
                                       const Error& e) {
  const auto kind = e.kind() == ErrorKind::protocol ? ErrorKind::protocol : ErrorKind::inference;
  throw Error(kind, std::string(role) + " member '" + member + "' failed: " + e.what());
}

/// Mean over sorted values, as min + mean excess over min: independent of
/// input order and exact when all values are equal.
inline double ordered_mean(std::vector<double>& values) {
  std::sort(values.begin(), values.end());
  double excess = 0.0;
  for (double v : values) excess += v - values.front();
  return values.front() + excess / static_cast<double>(values.size());
}

inline void check_ensemble(std::size_t members, std::size_t tta) {
  if (members == 0) throw Error(ErrorKind::invalid_config, "ensemble has no members");
  if (tta == 0) throw Error(ErrorKind::invalid_config, "ensemble has no test-time transforms");
}

}  // namespace detail

/// Mean over members x transforms of inverse_map(member(forward(tile))).
/// Averaging sorts each pixel's values first, so the output is bit-identical
/// under any permutation of members or transforms.
inline ProbabilityMap ensemble_seg(Ensemble<SegPredictor>& ensemble, const RgbImage& tile,
                                   const Rect& window) {
  detail::check_ensemble(ensemble.members.size(), ensemble.tta.size());
  std::vector<ProbabilityMap> maps;
  maps.reserve(ensemble.members.size() * ensemble.tta.size());
  std::vector<RgbImage> inputs;
  for (Tta t : ensemble.tta) inputs.push_back(apply_tta(t, tile));
  for (auto& member : ensemble.members) {
    for (std::size_t ti = 0; ti < ensemble.tta.size(); ++ti) {
      const Tta t = ensemble.tta[ti];
      ProbabilityMap m;
      try {
        m = member->predict(inputs[ti], TileContext{window, t});
      } catch (const Error& e) {
        detail::member_failed("segmentation", member->name(), e);
      }
      if (!same_size(m, tile)) {
        throw Error(ErrorKind::inference, "segmentation member '" + member->name() +
                                              "' returned a " + std::to_string(m.width()) + "x" +
                                              std::to_string(m.height()) + " map for a " +
                                              std::to_string(tile.width()) + "x" +
                                              std::to_string(tile.height()) + " tile");
      }
      for (double v : m.data()) {
        if (!(v >= 0.0 && v <= 1.0)) {
          throw Error(ErrorKind::inference, "segmentation member '" + member->name() +
                                                "' returned a probability outside [0,1]");
        }
      }
      maps.push_back(inverse_map(t, m));
    }
  }
  if (maps.size() == 1) return std::move(maps.front());

  ProbabilityMap out(tile.width(), tile.height());
  std::vector<double> values(maps.size());
  for (std::size_t i = 0; i < out.pixel_count(); ++i) {
    for (std::size_t k = 0; k < maps.size(); ++k) values[k] = maps[k].data()[i];
    out.data()[i] = detail::ordered_mean(values);
  }
  return out;
}

inline double ensemble_cls(Ensemble<ClsPredictor>& ensemble, const RgbImage& patch, const Rect& window) {
  detail::check_ensemble(ensemble.members.size(), ensemble.tta.size());
  std::vector<double> scores;
  scores.reserve(ensemble.members.size() * ensemble.tta.size());
  std::vector<RgbImage> inputs;
  for (Tta t : ensemble.tta) inputs.push_back(apply_tta(t, patch));
  for (auto& member : ensemble.members) {
    for (std::size_t ti = 0; ti < ensemble.tta.size(); ++ti) {
      const Tta t = ensemble.tta[ti];
      double s = 0.0;
      try {
        s = member->score(inputs[ti], TileContext{window, t});
      } catch (const Error& e) {
        detail::member_failed("classification", member->name(), e);
      }
      if (!(s >= 0.0 && s <= 1.0)) {
        throw Error(ErrorKind::inference, "classification member '" + member->name() +
                                              "' returned a score outside [0,1]");
      }
      scores.push_back(s);
    }
  }
  return detail::ordered_mean(scores);
}

// ---------------------------------------------------------------------------
// Deterministic predictors
// ---------------------------------------------------------------------------

class ConstantSegPredictor final : public SegPredictor {
 public:
  explicit ConstantSegPredictor(double value) : value_(value) {}
  ProbabilityMap predict(const RgbImage& tile, const TileContext&) override {
    return ProbabilityMap(tile.width(), tile.height(), value_);
  }
  std::string name() const override { return "constant(" + std::to_string(value_) + ")"; }

 private:
  double value_;
};

class ConstantClsPredictor final : public ClsPredictor {
 public:
  explicit ConstantClsPredictor(double value) : value_(value) {}
  double score(const RgbImage&, const TileContext&) override { return value_; }
  std::string name() const override { return "constant(" + std::to_string(value_) + ")"; }

 private:
  double value_;
};

/// Applies a function to every pixel independently; flip-equivariant by
/// construction.
class PixelSegPredictor final : public SegPredictor {
 public:
  using Fn = std::function<double(std::uint8_t r, std::uint8_t g, std::uint8_t b)>;
  explicit PixelSegPredictor(Fn fn, std::string label = "pixelwise")
      : fn_(std::move(fn)), label_(std::move(label)) {}
  ProbabilityMap predict(const RgbImage& tile, const TileContext&) override {
    ProbabilityMap out(tile.width(), tile.height());
    for (std::size_t i = 0; i < tile.pixel_count(); ++i) {
      const auto p = tile.pixel(i);
      out.data()[i] = fn_(p[0], p[1], p[2]);
    }
    return out;
  }
  std::string name() const override { return label_; }

 private:
  Fn fn_;
  std::string label_;
};

/// Box mean over a (2r+1)^2 window with reflected borders.
inline ProbabilityMap box_blur(const ProbabilityMap& m, int radius) {
  if (radius <= 0) return m;
  const auto w = m.width(), h = m.height();
  ProbabilityMap tmp(w, h), out(w, h);
  const double n = 2.0 * radius + 1.0;
  for (std::int64_t y = 0; y < h; ++y) {
    for (std::int64_t x = 0; x < w; ++x) {
      double s = 0.0;
      for (int d = -radius; d <= radius; ++d) s += m.at(reflect_index(x + d, w), y);
      tmp.at(x, y) = s / n;
    }
  }
  for (std::int64_t y = 0; y < h; ++y) {
    for (std::int64_t x = 0; x < w; ++x) {
      double s = 0.0;
      for (int d = -radius; d <= radius; ++d) s += tmp.at(x, reflect_index(y + d, h));
      out.at(x, y) = s / n;
    }
  }
  return out;
}

/// Uniform noise in [-amplitude, amplitude] keyed on (seed, x, y) only, so
/// any tiling or call order sees the same value at a given pixel.
inline double pixel_noise(std::uint64_t seed, std::int64_t x, std::int64_t y, double amplitude) {
  const std::uint64_t key = mix64(mix64(seed, static_cast<std::uint64_t>(x)), static_cast<std::uint64_t>(y));
  const double u = static_cast<double>(key >> 11) * 0x1.0p-53;
  return amplitude * (2.0 * u - 1.0);
}

/// Emits a known full-image mask as probabilities, optionally box-blurred and
/// with seeded noise. Windows outside the image read the mask reflected.
class OracleSegPredictor final : public SegPredictor {
 public:
  OracleSegPredictor(const BinaryMask& mask, int blur_radius, double noise, std::uint64_t seed)
      : map_(mask.width(), mask.height()) {
    for (std::size_t i = 0; i < mask.pixel_count(); ++i) map_.data()[i] = mask.data()[i] ? 1.0 : 0.0;
    map_ = box_blur(map_, blur_radius);
    if (noise > 0.0) {
      for (std::int64_t y = 0; y < map_.height(); ++y)
        for (std::int64_t x = 0; x < map_.width(); ++x)
          map_.at(x, y) = std::clamp(map_.at(x, y) + pixel_noise(seed, x, y, noise), 0.0, 1.0);
    }
  }

  ProbabilityMap predict(const RgbImage& tile, const TileContext& ctx) override {
    if (tile.width() != ctx.window.width || tile.height() != ctx.window.height) {
      throw Error(ErrorKind::inference, "oracle predictor needs the tile window");
    }
    return transform_geometry(ctx.transform, crop(map_, ctx.window, true));
  }
  std::string name() const override { return "oracle-seg"; }

  const ProbabilityMap& full_map() const { return map_; }

 private:
  ProbabilityMap map_;
};

inline std::unique_ptr<SegPredictor> oracle_seg_predictor(const BinaryMask& gt_mask, int blur_radius,
                                                          double noise, std::uint64_t noise_seed) {
  return std::make_unique<OracleSegPredictor>(gt_mask, blur_radius, noise, noise_seed);
}

/// Classifier stub scoring a patch by how much of a disk around the patch
/// center is covered by a known mask, plus seeded noise.
class OracleClsPredictor final : public ClsPredictor {
 public:
  OracleClsPredictor(BinaryMask mask, int center_radius, double noise, std::uint64_t seed)
      : mask_(std::move(mask)), radius_(center_radius), noise_(noise), seed_(seed) {}

  double score(const RgbImage&, const TileContext& ctx) override {
    const auto cx = ctx.window.x0 + ctx.window.width / 2;
    const auto cy = ctx.window.y0 + ctx.window.height / 2;
    int hit = 0, total = 0;
    for (int dy = -radius_; dy <= radius_; ++dy) {
      for (int dx = -radius_; dx <= radius_; ++dx) {
        if (dx * dx + dy * dy > radius_ * radius_) continue;
        ++total;
        hit += mask_.at(reflect_index(cx + dx, mask_.width()), reflect_index(cy + dy, mask_.height())) ? 1 : 0;
      }
    }
    const double overlap = static_cast<double>(hit) / total;
    return std::clamp(overlap + pixel_noise(seed_, cx, cy, noise_), 0.0, 1.0);
  }
  std::string name() const override { return "oracle-cls"; }

 private:
  BinaryMask mask_;
  int radius_;
  double noise_;
  std::uint64_t seed_;
};

}  // namespace mitopipe::predict
