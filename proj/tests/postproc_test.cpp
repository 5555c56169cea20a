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

#include <gtest/gtest.h>

#include "mitopipe/postproc.hpp"
#include "mitopipe/rng.hpp"
#include "support/oracles.hpp"

namespace mitopipe::postproc {
namespace {

using testing::flood_fill_labels;
using testing::same_partition;

BinaryMask random_mask(std::int64_t w, std::int64_t h, Rng& rng, std::uint64_t density_of_8) {
  BinaryMask m(w, h);
  for (auto& v : m.data()) v = rng.below(8) < density_of_8 ? 1 : 0;
  return m;
}

// Direct definition: a pixel survives erosion when every disk offset lands on
// foreground or outside the image; dilation sets a pixel when any disk offset
// lands on foreground inside the image.
BinaryMask brute_erode(const BinaryMask& m, int r) {
  BinaryMask out(m.width(), m.height(), 0);
  for (std::int64_t y = 0; y < m.height(); ++y)
    for (std::int64_t x = 0; x < m.width(); ++x) {
      bool ok = m.at(x, y) != 0;
      for (auto [dx, dy] : disk_offsets(r)) {
        if (m.contains(x + dx, y + dy) && !m.at(x + dx, y + dy)) ok = false;
      }
      out.at(x, y) = ok;
    }
  return out;
}

BinaryMask brute_dilate(const BinaryMask& m, int r) {
  BinaryMask out(m.width(), m.height(), 0);
  for (std::int64_t y = 0; y < m.height(); ++y)
    for (std::int64_t x = 0; x < m.width(); ++x)
      for (auto [dx, dy] : disk_offsets(r))
        if (m.contains(x + dx, y + dy) && m.at(x + dx, y + dy)) out.at(x, y) = 1;
  return out;
}

TEST(Binarize, InclusiveThreshold) {
  EXPECT_EQ(binarize(ProbabilityMap(4, 4, 0.39), 0.4), BinaryMask(4, 4, 0));
  EXPECT_EQ(binarize(ProbabilityMap(4, 4, 0.4), 0.4), BinaryMask(4, 4, 1));
}

TEST(Binarize, MatchesPredicateAndIsIdempotent) {
  Rng rng(1);
  ProbabilityMap m(37, 23);
  for (auto& v : m.data()) v = rng.uniform();
  const auto b = binarize(m, 0.6);
  for (std::size_t i = 0; i < m.pixel_count(); ++i) ASSERT_EQ(b.data()[i], m.data()[i] >= 0.6 ? 1 : 0);
  ProbabilityMap bm(37, 23);
  for (std::size_t i = 0; i < bm.pixel_count(); ++i) bm.data()[i] = b.data()[i];
  for (double t : {0.0, 0.3, 1.0}) {
    const auto twice = binarize(bm, t);
    if (t > 0.0) EXPECT_EQ(twice, b);
  }
}

TEST(Morphology, DiskShape) {
  EXPECT_EQ(disk_offsets(0).size(), 1u);
  EXPECT_EQ(disk_offsets(1).size(), 5u);
  EXPECT_EQ(disk_offsets(2).size(), 13u);
}

TEST(Morphology, MatchesBruteForce) {
  Rng rng(2);
  for (int trial = 0; trial < 60; ++trial) {
    const auto m = random_mask(1 + static_cast<std::int64_t>(rng.below(40)),
                               1 + static_cast<std::int64_t>(rng.below(40)), rng, 2 + rng.below(6));
    const int r = static_cast<int>(rng.below(4));
    ASSERT_EQ(erode(m, r), brute_erode(m, r));
    ASSERT_EQ(dilate(m, r), brute_dilate(m, r));
  }
}

TEST(MorphClean, SinglePixelRemoved) {
  BinaryMask m(15, 15, 0);
  m.at(7, 7) = 1;
  const auto out = morph_clean(m, PostprocConfig{0.4, 2, 30});
  for (auto v : out.data()) EXPECT_EQ(v, 0);
}

TEST(MorphClean, SquareEqualsOpeningOracle) {
  BinaryMask m(40, 40, 0);
  for (int y = 10; y < 30; ++y)
    for (int x = 10; x < 30; ++x) m.at(x, y) = 1;
  const auto out = morph_clean(m, PostprocConfig{0.4, 2, 30});
  EXPECT_EQ(out, brute_dilate(brute_erode(m, 2), 2));
  // Interior untouched, only the four corners are rounded.
  std::int64_t area = 0;
  for (auto v : out.data()) area += v;
  // Each corner loses (0,0), (1,0), (0,1) relative to the corner.
  EXPECT_EQ(area, 400 - 4 * 3);
  EXPECT_EQ(out.at(10, 10), 0);
  EXPECT_EQ(out.at(11, 10), 0);
  EXPECT_EQ(out.at(12, 10), 1);
  EXPECT_EQ(out.at(20, 20), 1);
}

TEST(MorphClean, SmallBlobRemovedByArea) {
  BinaryMask m(20, 20, 0);
  for (int y = 5; y < 10; ++y)
    for (int x = 5; x < 10; ++x) m.at(x, y) = 1;
  EXPECT_EQ(remove_small(m, 30), BinaryMask(20, 20, 0));
  EXPECT_EQ(remove_small(m, 25), m);
  const auto out = morph_clean(m, PostprocConfig{0.4, 0, 30});
  EXPECT_EQ(out, BinaryMask(20, 20, 0));
}

TEST(MorphClean, AntiExtensiveAndFiltered) {
  Rng rng(3);
  const PostprocConfig cfg{0.4, 2, 30};
  for (int trial = 0; trial < 40; ++trial) {
    const auto m = random_mask(48, 48, rng, 5 + rng.below(3));
    const auto out = morph_clean(m, cfg);
    for (std::size_t i = 0; i < m.pixel_count(); ++i) ASSERT_LE(out.data()[i], m.data()[i]);
    const auto opened = brute_dilate(brute_erode(m, 2), 2);
    for (std::size_t i = 0; i < m.pixel_count(); ++i) ASSERT_LE(out.data()[i], opened.data()[i]);
    const auto area = region_areas(connected_components(out));
    for (std::size_t l = 1; l < area.size(); ++l) ASSERT_GE(area[l], 30);
  }
}

TEST(ConnectedComponents, Basics) {
  EXPECT_EQ(connected_components(BinaryMask(5, 5, 0)).region_count, 0u);
  BinaryMask diag(4, 4, 0);
  diag.at(1, 1) = diag.at(2, 2) = 1;
  EXPECT_EQ(connected_components(diag).region_count, 1u);
  BinaryMask two(6, 3, 0);
  two.at(4, 0) = two.at(0, 2) = 1;
  const auto r = connected_components(two);
  EXPECT_EQ(r.region_count, 2u);
  EXPECT_EQ(r.at(4, 0), 1u);  // discovered first in raster order
  EXPECT_EQ(r.at(0, 2), 2u);
}

TEST(ConnectedComponents, MatchesFloodFillOracle) {
  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    const auto m = random_mask(64, 64, rng, 1 + rng.below(6));
    const auto r = connected_components(m);
    const auto [labels, count] = flood_fill_labels(m);
    ASSERT_EQ(r.region_count, count);
    ASSERT_TRUE(same_partition(r.labels, labels));
    ASSERT_EQ(r.labels, labels);  // same discovery order too
  }
}

TEST(Centroids, SymmetricBlock) {
  BinaryMask m(30, 30, 0);
  for (int y = 20; y <= 22; ++y)
    for (int x = 10; x <= 12; ++x) m.at(x, y) = 1;
  const auto d = centroids(connected_components(m), ProbabilityMap(30, 30, 0.8));
  ASSERT_EQ(d.size(), 1u);
  EXPECT_DOUBLE_EQ(d[0].x, 11.0);
  EXPECT_DOUBLE_EQ(d[0].y, 21.0);
  EXPECT_DOUBLE_EQ(d[0].score, 0.8);
}

TEST(Centroids, LShapeMeanMayLieOutside) {
  // (0,0),(0,1),(0,2),(1,2),(2,2): x sum 3, y sum 7.
  BinaryMask m(5, 5, 0);
  m.at(0, 0) = m.at(0, 1) = m.at(0, 2) = m.at(1, 2) = m.at(2, 2) = 1;
  const auto d = centroids(connected_components(m), ProbabilityMap(5, 5, 0.5));
  ASSERT_EQ(d.size(), 1u);
  EXPECT_DOUBLE_EQ(d[0].x, 3.0 / 5.0);
  EXPECT_DOUBLE_EQ(d[0].y, 7.0 / 5.0);
  EXPECT_EQ(m.at(1, 1), 0);  // centroid pixel (0.6,1.4) rounds to (1,1), not in region
}

TEST(Centroids, EmptyAndMismatch) {
  EXPECT_TRUE(centroids(connected_components(BinaryMask(4, 4, 0)), ProbabilityMap(4, 4)).empty());
  EXPECT_THROW(centroids(connected_components(BinaryMask(4, 4, 0)), ProbabilityMap(5, 4)), Error);
}

// Separated radially decreasing bumps: every superlevel set of a bump is a
// disk, so raising the threshold can only shrink or remove candidates.
TEST(Candidates, MonotoneInThresholdOnBlobMaps) {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    ProbabilityMap m(120, 120, 0.0);
    for (int cy = 15; cy < 120; cy += 30) {
      for (int cx = 15; cx < 120; cx += 30) {
        const double peak = rng.uniform(0.2, 1.0), radius = rng.uniform(4.0, 12.0);
        for (int y = cy - 14; y <= cy + 14; ++y)
          for (int x = cx - 14; x <= cx + 14; ++x)
            m.at(x, y) = std::max(0.0, peak * (1.0 - std::hypot(x - cx, y - cy) / radius));
      }
    }
    const PostprocConfig base{0.0, 1, 5};
    std::size_t last = SIZE_MAX;
    for (int k = 1; k <= 10; ++k) {
      PostprocConfig cfg = base;
      cfg.t_seg = 0.1 * k;
      const auto c = extract_candidates(m, cfg).size();
      ASSERT_LE(c, last) << "t_seg " << cfg.t_seg;
      last = c;
    }
  }
}

// Two bright lobes joined by a dimmer neck: one region at a low threshold,
// two once the neck drops out.
TEST(Candidates, NeckSplitsAtHigherThreshold) {
  ProbabilityMap m(40, 10, 0.0);
  for (int y = 2; y < 8; ++y) {
    for (int x = 2; x < 38; ++x) m.at(x, y) = (x >= 15 && x < 25) ? 0.5 : 0.9;
  }
  EXPECT_EQ(extract_candidates(m, PostprocConfig{0.4, 0, 0}).size(), 1u);
  EXPECT_EQ(extract_candidates(m, PostprocConfig{0.6, 0, 0}).size(), 2u);
}

TEST(PostprocConfig, Validation) {
  EXPECT_THROW((PostprocConfig{1.1, 2, 30}.validate()), Error);
  EXPECT_THROW((PostprocConfig{0.4, -1, 30}.validate()), Error);
  EXPECT_THROW((PostprocConfig{0.4, 2, -5}.validate()), Error);
}

}  // namespace
}  // namespace mitopipe::postproc
