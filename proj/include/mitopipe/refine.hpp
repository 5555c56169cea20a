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

/// @file refine.hpp
/// @brief Classifier verification of segmentation candidates.

#pragma once

#include <string>
#include <vector>

#include "mitopipe/core.hpp"
#include "mitopipe/predictor.hpp"

namespace mitopipe::refine {

inline constexpr std::int64_t kPatchSize = 96;

struct RefineConfig {
  std::int64_t patch = kPatchSize;
  double t_cls = 0.6;

  void validate() const {
    if (patch != kPatchSize) {
      throw Error(ErrorKind::invalid_config, "classifier patch size is fixed at 96, got " + std::to_string(patch));
    }
    if (!(t_cls >= 0.0 && t_cls <= 1.0)) {
      throw Error(ErrorKind::invalid_config, "t_cls must lie in [0,1], got " + std::to_string(t_cls));
    }
  }
};

/// 96x96 window centered on the rounded candidate position. For even sizes
/// the center pixel sits at offset patch/2.
inline Rect patch_window(const Detection& d, std::int64_t patch = kPatchSize) {
  return Rect{round_pixel(d.x) - patch / 2, round_pixel(d.y) - patch / 2, patch, patch};
}

inline void check_candidate(const RgbImage& image, const Detection& d, std::size_t index) {
  if (!(d.x >= 0.0 && d.y >= 0.0 && d.x < static_cast<double>(image.width()) &&
        d.y < static_cast<double>(image.height()))) {
    throw Error(ErrorKind::invalid_input, "candidate " + std::to_string(index) + " at (" + std::to_string(d.x) +
                                              ", " + std::to_string(d.y) + ") lies outside the image");
  }
}

/// Classifier score for one candidate; errors are tagged with its index.
inline double score_candidate(const RgbImage& image, const Detection& d, std::size_t index,
                              predict::Ensemble<predict::ClsPredictor>& cls, std::int64_t patch = kPatchSize) {
  check_candidate(image, d, index);
  const auto window = patch_window(d, patch);
  try {
    return predict::ensemble_cls(cls, crop(image, window, true), window);
  } catch (const Error& e) {
    throw Error(e.kind(), "candidate " + std::to_string(index) + ": " + e.what());
  }
}

/// Keeps candidates whose ensemble score is >= t_cls, in input order, each
/// carrying the classifier score.
inline std::vector<Detection> refine_candidates(const RgbImage& image, const std::vector<Detection>& candidates,
                                                predict::Ensemble<predict::ClsPredictor>& cls,
                                                const RefineConfig& cfg) {
  cfg.validate();
  std::vector<Detection> kept;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const double s = score_candidate(image, candidates[i], i, cls, cfg.patch);
    if (s >= cfg.t_cls) kept.push_back(Detection{candidates[i].x, candidates[i].y, s});
  }
  return kept;
}

}  // namespace mitopipe::refine
