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

/// @file sampler.hpp
/// @brief Scanner-block cross-validation folds and balanced per-epoch
/// under-sampling manifests.
///
/// Patch references are opaque strings supplied by the caller. A manifest is
/// a pure function of (positives, negatives, seed, epoch).

#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <istream>
#include <ostream>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "mitopipe/core.hpp"
#include "mitopipe/rng.hpp"

namespace mitopipe::sampler {

struct FoldSplit {
  int fold_id = 1;
  std::vector<int> train_ids;
  std::vector<int> val_ids;
};

/// Splits `image_ids` (taken in ascending order) into three equal contiguous
/// blocks; fold k validates on block k and trains on the other two.
inline std::array<FoldSplit, 3> make_folds(std::vector<int> image_ids) {
  std::sort(image_ids.begin(), image_ids.end());
  if (image_ids.empty() || image_ids.size() % 3 != 0) {
    throw Error(ErrorKind::invalid_input, "fold split needs a non-zero multiple of 3 image ids, got " +
                                              std::to_string(image_ids.size()));
  }
  if (std::adjacent_find(image_ids.begin(), image_ids.end()) != image_ids.end()) {
    throw Error(ErrorKind::invalid_input, "fold split got duplicate image ids");
  }
  const std::size_t block = image_ids.size() / 3;
  std::array<FoldSplit, 3> folds;
  for (std::size_t k = 0; k < 3; ++k) {
    folds[k].fold_id = static_cast<int>(k + 1);
    for (std::size_t i = 0; i < image_ids.size(); ++i) {
      (i / block == k ? folds[k].val_ids : folds[k].train_ids).push_back(image_ids[i]);
    }
  }
  return folds;
}

/// Ids 1..n.
inline std::array<FoldSplit, 3> make_folds(int n) {
  if (n < 1) throw Error(ErrorKind::invalid_input, "image count must be positive");
  std::vector<int> ids(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) ids[static_cast<std::size_t>(i)] = i + 1;
  return make_folds(std::move(ids));
}

enum class Label { positive, negative };

inline std::string_view to_string(Label l) { return l == Label::positive ? "positive" : "negative"; }

struct ManifestEntry {
  std::string patch;
  Label label = Label::positive;

  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

struct EpochManifest {
  std::uint64_t epoch = 0;
  std::vector<ManifestEntry> entries;

  friend bool operator==(const EpochManifest&, const EpochManifest&) = default;
};

/// Stream for one epoch of one seed.
inline Rng epoch_rng(std::uint64_t seed, std::uint64_t epoch) { return Rng(mix64(seed, epoch)); }

/// Every positive once plus min(|pos|, |neg|) negatives drawn without
/// replacement, then shuffled; one RNG stream serves both draws.
inline EpochManifest sample_epoch(const std::vector<std::string>& positives,
                                  const std::vector<std::string>& negatives, std::uint64_t epoch,
                                  std::uint64_t seed) {
  Rng rng = epoch_rng(seed, epoch);
  const auto picks = rng.choose(negatives.size(), std::min(positives.size(), negatives.size()));
  EpochManifest m;
  m.epoch = epoch;
  m.entries.reserve(positives.size() + picks.size());
  for (const auto& p : positives) m.entries.push_back({p, Label::positive});
  for (auto i : picks) m.entries.push_back({negatives[i], Label::negative});
  rng.shuffle(m.entries);
  return m;
}

/// `label,patch_path` lines, no header; labels are "positive" / "negative".
inline void write_manifest(std::ostream& out, const EpochManifest& m) {
  for (const auto& e : m.entries) out << to_string(e.label) << ',' << e.patch << '\n';
}

/// One non-empty line per patch reference; surrounding whitespace and a
/// trailing CR are stripped.
inline std::vector<std::string> read_patch_list(std::istream& in) {
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    const auto b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos) continue;
    const auto e = line.find_last_not_of(" \t\r");
    out.push_back(line.substr(b, e - b + 1));
  }
  return out;
}

}  // namespace mitopipe::sampler
