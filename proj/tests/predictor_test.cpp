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

#include <algorithm>

#include "mitopipe/predictor.hpp"
#include "support/synthetic.hpp"

namespace mitopipe::predict {
namespace {

RgbImage random_image(std::int64_t w, std::int64_t h, std::uint64_t seed) {
  Rng rng(seed);
  RgbImage img(w, h);
  for (auto& v : img.data()) v = static_cast<std::uint8_t>(rng.below(256));
  return img;
}

BinaryMask random_mask(std::int64_t w, std::int64_t h, std::uint64_t seed) {
  Rng rng(seed);
  BinaryMask m(w, h);
  for (auto& v : m.data()) v = rng.below(4) == 0 ? 1 : 0;
  return m;
}

template <typename P, typename... Args>
Ensemble<P> single(std::unique_ptr<P> p, std::vector<Tta> tta = {Tta::identity}) {
  Ensemble<P> e;
  e.members.push_back(std::move(p));
  e.tta = std::move(tta);
  return e;
}

TEST(Tta, ParseRoundTrip) {
  for (Tta t : kAllTta) EXPECT_EQ(parse_tta(to_string(t)), t);
  EXPECT_FALSE(parse_tta("rotate").has_value());
}

TEST(Tta, FlipsAreInvolutions) {
  const auto img = random_image(13, 7, 1);
  for (Tta t : {Tta::hflip, Tta::vflip, Tta::hvflip}) {
    EXPECT_EQ(transform_geometry(t, apply_tta(t, img)), img);
  }
  EXPECT_EQ(apply_tta(Tta::hflip, img).at(0, 3, 1), img.at(12, 3, 1));
  EXPECT_EQ(apply_tta(Tta::vflip, img).at(2, 0, 2), img.at(2, 6, 2));
}

TEST(Sharpen, UniformUnchanged) {
  const RgbImage gray(9, 9, 117);
  EXPECT_EQ(sharpen(gray), gray);
}

TEST(Sharpen, BrightCenterOnGray) {
  // blur at the center = (8*100 + 150)/9 = 105.56; 2*150 - 105.56 -> 194.
  // blur at each neighbor is the same; 2*100 - 105.56 -> 94.
  RgbImage img(5, 5, 100);
  for (int c = 0; c < 3; ++c) img.at(2, 2, c) = 150;
  const auto out = sharpen(img);
  EXPECT_EQ(out.at(2, 2, 0), 194);
  for (int dy = -1; dy <= 1; ++dy)
    for (int dx = -1; dx <= 1; ++dx)
      if (dx || dy) EXPECT_EQ(out.at(2 + dx, 2 + dy, 1), 94);
  EXPECT_EQ(out.at(0, 0, 0), 100);
}

TEST(Sharpen, WhiteDotOnBlackClamps) {
  RgbImage img(5, 5, 0);
  for (int c = 0; c < 3; ++c) img.at(2, 2, c) = 255;
  const auto out = sharpen(img);
  EXPECT_EQ(out.at(2, 2, 0), 255);  // 510 - 28.3 clamped
  EXPECT_EQ(out.at(1, 1, 0), 0);    // -28.3 clamped
  EXPECT_EQ(out.at(0, 0, 0), 0);
}

TEST(EnsembleSeg, SingleMemberIdentityIsExact) {
  const auto mask = random_mask(40, 30, 2);
  auto e = single<SegPredictor>(oracle_seg_predictor(mask, 2, 0.05, 9));
  OracleSegPredictor ref(mask, 2, 0.05, 9);
  const Rect win{5, 3, 20, 20};
  const auto tile = crop(random_image(40, 30, 3), win, false);
  EXPECT_EQ(ensemble_seg(e, tile, win), ref.predict(tile, TileContext{win, Tta::identity}));
}

TEST(EnsembleSeg, EquivariantOracleIgnoresTta) {
  const auto mask = random_mask(64, 64, 4);
  const Rect win{-8, 10, 48, 48};
  const auto tile = crop(random_image(64, 64, 5), win, true);
  auto off = single<SegPredictor>(oracle_seg_predictor(mask, 1, 0.05, 3));
  auto on = single<SegPredictor>(oracle_seg_predictor(mask, 1, 0.05, 3),
                                 {kAllTta.begin(), kAllTta.end()});
  const auto a = ensemble_seg(off, tile, win);
  const auto b = ensemble_seg(on, tile, win);
  for (std::size_t i = 0; i < a.pixel_count(); ++i) ASSERT_NEAR(a.data()[i], b.data()[i], 1e-12);
}

TEST(EnsembleSeg, PixelwiseMemberIsFlipEquivariant) {
  const auto tile = random_image(33, 21, 6);
  auto fn = [](std::uint8_t r, std::uint8_t g, std::uint8_t b) { return (r + 2.0 * g + b) / 1020.0; };
  auto off = single<SegPredictor>(std::make_unique<PixelSegPredictor>(fn));
  auto on = single<SegPredictor>(std::make_unique<PixelSegPredictor>(fn),
                                 {Tta::identity, Tta::hflip, Tta::vflip, Tta::hvflip});
  const Rect win{0, 0, 33, 21};
  EXPECT_EQ(ensemble_seg(off, tile, win), ensemble_seg(on, tile, win));
}

TEST(EnsembleSeg, ConstantMembersAverage) {
  Ensemble<SegPredictor> e;
  e.members.push_back(std::make_unique<ConstantSegPredictor>(0.2));
  e.members.push_back(std::make_unique<ConstantSegPredictor>(0.6));
  const auto out = ensemble_seg(e, RgbImage(8, 8, 50), Rect{0, 0, 8, 8});
  for (double v : out.data()) ASSERT_DOUBLE_EQ(v, 0.4);
}

TEST(EnsembleSeg, MemberPermutationIsBitExact) {
  const auto mask = random_mask(50, 50, 7);
  const Rect win{0, 0, 50, 50};
  const auto tile = random_image(50, 50, 8);
  auto build = [&](std::vector<int> order, std::vector<Tta> tta) {
    Ensemble<SegPredictor> e;
    for (int k : order) e.members.push_back(oracle_seg_predictor(mask, k, 0.05, 100 + k));
    e.tta = std::move(tta);
    return e;
  };
  auto a = build({0, 1, 2}, {kAllTta.begin(), kAllTta.end()});
  auto b = build({2, 0, 1}, {Tta::sharpen, Tta::hvflip, Tta::identity, Tta::vflip, Tta::hflip});
  EXPECT_EQ(ensemble_seg(a, tile, win), ensemble_seg(b, tile, win));
}

class FailingSeg final : public SegPredictor {
 public:
  ProbabilityMap predict(const RgbImage&, const TileContext&) override {
    throw Error(ErrorKind::inference, "process exited");
  }
  std::string name() const override { return "broken-model"; }
};

TEST(EnsembleSeg, FailureNamesMember) {
  Ensemble<SegPredictor> e;
  e.members.push_back(std::make_unique<ConstantSegPredictor>(0.2));
  e.members.push_back(std::make_unique<FailingSeg>());
  try {
    ensemble_seg(e, RgbImage(4, 4), Rect{0, 0, 4, 4});
    FAIL();
  } catch (const Error& err) {
    EXPECT_EQ(err.kind(), ErrorKind::inference);
    EXPECT_NE(std::string(err.what()).find("broken-model"), std::string::npos);
  }
}

TEST(EnsembleSeg, RejectsOutOfRangeAndWrongSize) {
  auto bad = single<SegPredictor>(std::make_unique<ConstantSegPredictor>(1.5));
  EXPECT_THROW(ensemble_seg(bad, RgbImage(4, 4), Rect{0, 0, 4, 4}), Error);
  Ensemble<SegPredictor> empty;
  EXPECT_THROW(ensemble_seg(empty, RgbImage(4, 4), Rect{0, 0, 4, 4}), Error);
}

TEST(EnsembleCls, ConstantMembers) {
  Ensemble<ClsPredictor> e;
  for (double v : {0.9, 0.9, 0.3}) e.members.push_back(std::make_unique<ConstantClsPredictor>(v));
  EXPECT_DOUBLE_EQ(ensemble_cls(e, RgbImage(96, 96), Rect{0, 0, 96, 96}), 0.7);
}

class MeanIntensityCls final : public ClsPredictor {
 public:
  double score(const RgbImage& patch, const TileContext&) override {
    double s = 0;
    for (auto v : patch.data()) s += v;
    return s / (255.0 * static_cast<double>(patch.data().size()));
  }
  std::string name() const override { return "mean-intensity"; }
};

TEST(EnsembleCls, UniformPatchIsTtaInvariant) {
  const RgbImage patch(96, 96, 140);
  auto one = single<ClsPredictor>(std::make_unique<MeanIntensityCls>());
  auto all = single<ClsPredictor>(std::make_unique<MeanIntensityCls>(), {kAllTta.begin(), kAllTta.end()});
  const Rect win{0, 0, 96, 96};
  EXPECT_EQ(ensemble_cls(all, patch, win), ensemble_cls(one, patch, win));
}

TEST(EnsembleCls, PermutationBitExact) {
  Rng rng(11);
  std::vector<double> vals;
  for (int k = 0; k < 7; ++k) vals.push_back(rng.uniform());
  auto build = [](const std::vector<double>& v) {
    Ensemble<ClsPredictor> e;
    for (double x : v) e.members.push_back(std::make_unique<ConstantClsPredictor>(x));
    return e;
  };
  auto a = build(vals);
  const double ref = ensemble_cls(a, RgbImage(2, 2), Rect{0, 0, 2, 2});
  for (int trial = 0; trial < 20; ++trial) {
    rng.shuffle(vals);
    auto b = build(vals);
    ASSERT_EQ(ensemble_cls(b, RgbImage(2, 2), Rect{0, 0, 2, 2}), ref);
  }
}

TEST(OracleSeg, ExactWithoutBlurOrNoise) {
  const auto mask = random_mask(30, 20, 12);
  OracleSegPredictor p(mask, 0, 0.0, 0);
  const auto out = p.predict(RgbImage(30, 20), TileContext{Rect{0, 0, 30, 20}, Tta::identity});
  for (std::size_t i = 0; i < mask.pixel_count(); ++i) ASSERT_EQ(out.data()[i], mask.data()[i] ? 1.0 : 0.0);
}

TEST(OracleSeg, NoiseIsBounded) {
  const auto mask = random_mask(30, 20, 13);
  OracleSegPredictor p(mask, 0, 0.05, 1);
  const auto& m = p.full_map();
  for (std::size_t i = 0; i < mask.pixel_count(); ++i) {
    ASSERT_LE(std::abs(m.data()[i] - (mask.data()[i] ? 1.0 : 0.0)), 0.05 + 1e-15);
    ASSERT_GE(m.data()[i], 0.0);
    ASSERT_LE(m.data()[i], 1.0);
  }
}

TEST(OracleSeg, SameSeedSameOutput) {
  const auto mask = random_mask(30, 20, 14);
  OracleSegPredictor a(mask, 1, 0.05, 5), b(mask, 1, 0.05, 5), c(mask, 1, 0.05, 6);
  EXPECT_EQ(a.full_map(), b.full_map());
  EXPECT_FALSE(a.full_map() == c.full_map());
}

TEST(OracleCls, ScoresMaskOverlap) {
  BinaryMask mask(200, 200, 0);
  for (int y = 40; y < 60; ++y)
    for (int x = 40; x < 60; ++x) mask.at(x, y) = 1;
  OracleClsPredictor p(mask, 4, 0.0, 0);
  EXPECT_EQ(p.score(RgbImage(96, 96), TileContext{Rect{2, 2, 96, 96}, Tta::identity}), 1.0);
  EXPECT_EQ(p.score(RgbImage(96, 96), TileContext{Rect{100, 100, 96, 96}, Tta::identity}), 0.0);
}

}  // namespace
}  // namespace mitopipe::predict
