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

/// @file tiling.hpp
/// @brief Overlapping tile plans and mean aggregation of per-tile maps.

#pragma once

#include <algorithm>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mitopipe/core.hpp"

namespace mitopipe::tiling {

struct TileGrid {
  std::int64_t width = 0;
  std::int64_t height = 0;
  std::int64_t tile = 512;
  std::int64_t overlap = 75;
  std::vector<std::int64_t> x_origins;
  std::vector<std::int64_t> y_origins;
  std::vector<Rect> tiles;  // row-major over (y_origins, x_origins)

  std::int64_t stride() const { return tile - overlap; }
};

/// 0, stride, 2*stride, ... while the tile still ends inside the image, then
/// a final origin clamped to max(dim - tile, 0).
inline std::vector<std::int64_t> axis_origins(std::int64_t dim, std::int64_t tile,
                                              std::int64_t overlap) {
  const std::int64_t stride = tile - overlap;
  std::vector<std::int64_t> origins;
  for (std::int64_t o = 0; o + tile < dim; o += stride) origins.push_back(o);
  const std::int64_t last = std::max<std::int64_t>(dim - tile, 0);
  if (origins.empty() || origins.back() != last) origins.push_back(last);
  return origins;
}

inline TileGrid plan_tiles(std::int64_t width, std::int64_t height, std::int64_t tile = 512,
                           std::int64_t overlap = 75) {
  if (tile < 1 || overlap < 0 || overlap >= tile) {
    throw Error(ErrorKind::invalid_config, "tiling needs tile >= 1 and 0 <= overlap < tile (tile " +
                                               std::to_string(tile) + ", overlap " +
                                               std::to_string(overlap) + ")");
  }
  if (width < 1 || height < 1) {
    throw Error(ErrorKind::invalid_input, "cannot tile an empty image");
  }
  TileGrid grid;
  grid.width = width;
  grid.height = height;
  grid.tile = tile;
  grid.overlap = overlap;
  grid.x_origins = axis_origins(width, tile, overlap);
  grid.y_origins = axis_origins(height, tile, overlap);
  for (auto y : grid.y_origins) {
    for (auto x : grid.x_origins) grid.tiles.push_back(Rect{x, y, tile, tile});
  }
  return grid;
}

/// Per-pixel number of tiles covering it.
inline std::vector<std::uint32_t> coverage(const TileGrid& grid) {
  std::vector<std::uint32_t> count(static_cast<std::size_t>(grid.width * grid.height), 0);
  for (const auto& t : grid.tiles) {
    const auto y1 = std::min(t.y1(), grid.height);
    const auto x1 = std::min(t.x1(), grid.width);
    for (auto y = t.y0; y < y1; ++y)
      for (auto x = t.x0; x < x1; ++x) ++count[static_cast<std::size_t>(y * grid.width + x)];
  }
  return count;
}

/// Mean of all tile values covering each pixel. Each pixel accumulates the
/// deviation from the first value that covered it, so equal values average to
/// themselves exactly; tiles are visited in grid order.
inline ProbabilityMap aggregate(const TileGrid& grid, std::span<const ProbabilityMap> tile_maps) {
  if (tile_maps.size() != grid.tiles.size()) {
    throw Error(ErrorKind::invalid_input, "aggregate got " + std::to_string(tile_maps.size()) +
                                              " tile maps for " + std::to_string(grid.tiles.size()) +
                                              " tiles");
  }
  std::vector<double> base(static_cast<std::size_t>(grid.width * grid.height), 0.0);
  std::vector<double> dev(base.size(), 0.0);
  std::vector<std::uint32_t> count(base.size(), 0);
  for (std::size_t k = 0; k < grid.tiles.size(); ++k) {
    const auto& t = grid.tiles[k];
    const auto& m = tile_maps[k];
    if (m.width() != t.width || m.height() != t.height) {
      throw Error(ErrorKind::invalid_input, "tile map " + std::to_string(k) + " is " +
                                                std::to_string(m.width()) + "x" +
                                                std::to_string(m.height()) + ", expected " +
                                                std::to_string(t.width) + "x" + std::to_string(t.height));
    }
    const auto y1 = std::min(t.y1(), grid.height);
    const auto x1 = std::min(t.x1(), grid.width);
    for (auto y = t.y0; y < y1; ++y) {
      for (auto x = t.x0; x < x1; ++x) {
        const auto i = static_cast<std::size_t>(y * grid.width + x);
        const double v = m.at(x - t.x0, y - t.y0);
        if (count[i]++ == 0) {
          base[i] = v;
        } else {
          dev[i] += v - base[i];
        }
      }
    }
  }
  ProbabilityMap out(grid.width, grid.height);
  auto dst = out.data();
  for (std::size_t i = 0; i < base.size(); ++i) {
    if (count[i] == 0) {
      throw Error(ErrorKind::invalid_input, "tile grid leaves pixel " + std::to_string(i) + " uncovered");
    }
    dst[i] = base[i] + dev[i] / static_cast<double>(count[i]);
  }
  return out;
}

inline ProbabilityMap aggregate(const TileGrid& grid, std::span<const ProbabilityMap> tile_maps,
                                std::int64_t width, std::int64_t height) {
  if (width != grid.width || height != grid.height) {
    throw Error(ErrorKind::invalid_input, "aggregate size does not match the tile grid");
  }
  return aggregate(grid, tile_maps);
}

}  // namespace mitopipe::tiling
