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

/// @file postproc.hpp
/// @brief Probability map -> candidate centroids: threshold, opening, area
/// filter, 8-connected labeling.

#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mitopipe/core.hpp"

namespace mitopipe::postproc {

struct PostprocConfig {
  double t_seg = 0.4;
  int open_radius = 2;
  std::int64_t min_area = 30;

  void validate() const {
    if (!(t_seg >= 0.0 && t_seg <= 1.0)) {
      throw Error(ErrorKind::invalid_config, "t_seg must lie in [0,1], got " + std::to_string(t_seg));
    }
    if (open_radius < 0) throw Error(ErrorKind::invalid_config, "open_radius must be >= 0");
    if (min_area < 0) throw Error(ErrorKind::invalid_config, "min_area must be >= 0");
  }
};

struct LabeledRegions {
  std::int64_t width = 0;
  std::int64_t height = 0;
  std::vector<std::uint32_t> labels;  // 0 = background
  std::uint32_t region_count = 0;

  std::uint32_t at(std::int64_t x, std::int64_t y) const {
    return labels[static_cast<std::size_t>(y * width + x)];
  }
};

inline BinaryMask binarize(const ProbabilityMap& map, double t_seg) {
  BinaryMask out(map.width(), map.height());
  for (std::size_t i = 0; i < map.pixel_count(); ++i) out.data()[i] = map.data()[i] >= t_seg ? 1 : 0;
  return out;
}

/// Offsets (dx, dy) of a digital disk: dx^2 + dy^2 <= r^2.
inline std::vector<std::pair<int, int>> disk_offsets(int radius) {
  std::vector<std::pair<int, int>> out;
  for (int dy = -radius; dy <= radius; ++dy)
    for (int dx = -radius; dx <= radius; ++dx)
      if (dx * dx + dy * dy <= radius * radius) out.emplace_back(dx, dy);
  return out;
}

namespace detail {

/// Per row, the horizontal half-width of the disk at each dy.
inline std::vector<int> disk_spans(int radius) {
  std::vector<int> span(static_cast<std::size_t>(2 * radius + 1));
  for (int dy = -radius; dy <= radius; ++dy) {
    int w = 0;
    while ((w + 1) * (w + 1) + dy * dy <= radius * radius) ++w;
    span[static_cast<std::size_t>(dy + radius)] = w;
  }
  return span;
}

/// Row-wise prefix sums of foreground counts, one extra leading column.
inline std::vector<std::int32_t> row_prefix(const BinaryMask& m) {
  const auto w = m.width(), h = m.height();
  std::vector<std::int32_t> p(static_cast<std::size_t>((w + 1) * h), 0);
  for (std::int64_t y = 0; y < h; ++y) {
    auto* row = p.data() + y * (w + 1);
    for (std::int64_t x = 0; x < w; ++x) row[x + 1] = row[x] + (m.at(x, y) ? 1 : 0);
  }
  return p;
}

}  // namespace detail

/// Pixels outside the image count as foreground, so blobs touching the border
/// are not eaten from that side.
inline BinaryMask erode(const BinaryMask& m, int radius) {
  if (radius <= 0) return m;
  const auto w = m.width(), h = m.height();
  const auto span = detail::disk_spans(radius);
  const auto pre = detail::row_prefix(m);
  BinaryMask out(w, h, 0);
  for (std::int64_t y = 0; y < h; ++y) {
    for (std::int64_t x = 0; x < w; ++x) {
      if (!m.at(x, y)) continue;
      bool keep = true;
      for (int dy = -radius; dy <= radius && keep; ++dy) {
        const auto yy = y + dy;
        if (yy < 0 || yy >= h) continue;
        const int s = span[static_cast<std::size_t>(dy + radius)];
        const auto x0 = std::max<std::int64_t>(x - s, 0), x1 = std::min<std::int64_t>(x + s, w - 1);
        const auto* row = pre.data() + yy * (w + 1);
        keep = row[x1 + 1] - row[x0] == x1 - x0 + 1;
      }
      out.at(x, y) = keep ? 1 : 0;
    }
  }
  return out;
}

/// Pixels outside the image count as background.
inline BinaryMask dilate(const BinaryMask& m, int radius) {
  if (radius <= 0) return m;
  const auto w = m.width(), h = m.height();
  const auto span = detail::disk_spans(radius);
  const auto pre = detail::row_prefix(m);
  BinaryMask out(w, h, 0);
  for (std::int64_t y = 0; y < h; ++y) {
    for (std::int64_t x = 0; x < w; ++x) {
      bool hit = false;
      for (int dy = -radius; dy <= radius && !hit; ++dy) {
        const auto yy = y + dy;
        if (yy < 0 || yy >= h) continue;
        const int s = span[static_cast<std::size_t>(dy + radius)];
        const auto x0 = std::max<std::int64_t>(x - s, 0), x1 = std::min<std::int64_t>(x + s, w - 1);
        const auto* row = pre.data() + yy * (w + 1);
        hit = row[x1 + 1] - row[x0] > 0;
      }
      out.at(x, y) = hit ? 1 : 0;
    }
  }
  return out;
}

inline BinaryMask open(const BinaryMask& m, int radius) { return dilate(erode(m, radius), radius); }

/// 8-connected labeling; labels follow raster-scan discovery order from 1.
inline LabeledRegions connected_components(const BinaryMask& mask) {
  LabeledRegions r;
  r.width = mask.width();
  r.height = mask.height();
  r.labels.assign(mask.pixel_count(), 0);
  const auto w = r.width, h = r.height;
  std::vector<std::int64_t> stack;
  for (std::int64_t y = 0; y < h; ++y) {
    for (std::int64_t x = 0; x < w; ++x) {
      const auto i = static_cast<std::size_t>(y * w + x);
      if (!mask.data()[i] || r.labels[i]) continue;
      const auto label = ++r.region_count;
      r.labels[i] = label;
      stack.assign(1, static_cast<std::int64_t>(i));
      while (!stack.empty()) {
        const auto p = stack.back();
        stack.pop_back();
        const auto px = p % w, py = p / w;
        for (std::int64_t dy = -1; dy <= 1; ++dy) {
          for (std::int64_t dx = -1; dx <= 1; ++dx) {
            const auto nx = px + dx, ny = py + dy;
            if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
            const auto j = static_cast<std::size_t>(ny * w + nx);
            if (mask.data()[j] && !r.labels[j]) {
              r.labels[j] = label;
              stack.push_back(static_cast<std::int64_t>(j));
            }
          }
        }
      }
    }
  }
  return r;
}

/// Pixel count per label; index 0 is background.
inline std::vector<std::int64_t> region_areas(const LabeledRegions& r) {
  std::vector<std::int64_t> area(r.region_count + 1, 0);
  for (auto l : r.labels) ++area[l];
  return area;
}

inline BinaryMask remove_small(const BinaryMask& mask, std::int64_t min_area) {
  if (min_area <= 1) return mask;
  const auto r = connected_components(mask);
  const auto area = region_areas(r);
  BinaryMask out(mask.width(), mask.height(), 0);
  for (std::size_t i = 0; i < r.labels.size(); ++i) {
    const auto l = r.labels[i];
    out.data()[i] = (l != 0 && area[l] >= min_area) ? 1 : 0;
  }
  return out;
}

/// Opening with a disk of `open_radius`, then drop 8-connected components
/// smaller than `min_area`.
inline BinaryMask morph_clean(const BinaryMask& mask, const PostprocConfig& cfg) {
  cfg.validate();
  return remove_small(open(mask, cfg.open_radius), cfg.min_area);
}

/// One detection per region, in label order: mean pixel coordinate and mean
/// probability over the region.
inline std::vector<Detection> centroids(const LabeledRegions& regions, const ProbabilityMap& map) {
  if (regions.width != map.width() || regions.height != map.height()) {
    throw Error(ErrorKind::invalid_input, "regions and probability map differ in size");
  }
  const std::size_t n = regions.region_count;
  std::vector<double> sx(n + 1, 0.0), sy(n + 1, 0.0), sp(n + 1, 0.0);
  std::vector<std::int64_t> count(n + 1, 0);
  for (std::int64_t y = 0; y < regions.height; ++y) {
    for (std::int64_t x = 0; x < regions.width; ++x) {
      const auto l = regions.at(x, y);
      if (!l) continue;
      sx[l] += static_cast<double>(x);
      sy[l] += static_cast<double>(y);
      sp[l] += map.at(x, y);
      ++count[l];
    }
  }
  std::vector<Detection> out;
  out.reserve(n);
  for (std::size_t l = 1; l <= n; ++l) {
    const auto c = static_cast<double>(count[l]);
    out.push_back(Detection{sx[l] / c, sy[l] / c, sp[l] / c});
  }
  return out;
}

/// binarize -> morph_clean -> connected_components -> centroids.
inline std::vector<Detection> extract_candidates(const ProbabilityMap& map, const PostprocConfig& cfg) {
  cfg.validate();
  return centroids(connected_components(morph_clean(binarize(map, cfg.t_seg), cfg)), map);
}

}  // namespace mitopipe::postproc
