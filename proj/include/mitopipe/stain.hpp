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

/// @file stain.hpp
/// @brief Structure-preserving stain normalization for H&E images.
///
/// An RGB image is moved to optical density (OD) space, where the two stains
/// mix linearly (Beer-Lambert):
///
///     V (3 x N)  ~=  W (3 x 2) * H (2 x N),   W, H >= 0
///
/// W holds one unit-norm absorption vector per stain (hematoxylin first),
/// H the per-pixel stain concentrations. W is estimated by sparse
/// non-negative matrix factorization,
///
///     minimize  ||V - W H||_F^2 + lambda * sum(H)
///
/// alternating a per-pixel non-negative lasso for H (coordinate descent) with
/// a projected least-squares / gradient step on W. Normalization re-renders a source image's
/// concentrations, rescaled by the ratio of 99th percentiles, under a fixed
/// target stain matrix.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "mitopipe/core.hpp"
#include "mitopipe/rng.hpp"

namespace mitopipe::stain {

using OdPixel = std::array<double, 3>;

/// ln(256): OD of a zero-intensity channel.
inline constexpr double kMaxOd = 5.545177444479562;

struct SnmfConfig {
  double lambda = 0.1;          // sparsity weight used while fitting W
  int outer_iters = 50;
  double tol = 1e-4;            // relative objective change
  std::size_t max_pixels = 100000;
  double beta = 0.15;           // tissue OD threshold
  std::uint64_t seed = 0;
  double code_lambda = 0.01;    // sparsity weight for concentrations at normalization time

  void validate() const {
    if (!(lambda >= 0.0) || !(code_lambda >= 0.0)) {
      throw Error(ErrorKind::invalid_config, "snmf lambda must be >= 0");
    }
    if (outer_iters < 1) {
      throw Error(ErrorKind::invalid_config, "snmf outer_iters must be >= 1");
    }
    if (!(beta > 0.0 && beta < kMaxOd)) {
      throw Error(ErrorKind::invalid_config, "snmf beta must lie in (0, ln 256)");
    }
    if (!(tol >= 0.0)) {
      throw Error(ErrorKind::invalid_config, "snmf tol must be >= 0");
    }
    if (max_pixels < 2) {
      throw Error(ErrorKind::invalid_config, "snmf max_pixels must be >= 2");
    }
  }
};

/// Two unit-norm stain absorption vectors; column 0 is hematoxylin.
struct StainMatrix {
  std::array<OdPixel, 2> columns{};

  friend bool operator==(const StainMatrix&, const StainMatrix&) = default;
};

/// Ruifrok & Johnston reference H&E vectors, normalized.
inline StainMatrix reference_he() {
  StainMatrix m{{OdPixel{0.65, 0.70, 0.29}, OdPixel{0.07, 0.99, 0.11}}};
  for (auto& col : m.columns) {
    const double n = std::sqrt(col[0] * col[0] + col[1] * col[1] + col[2] * col[2]);
    for (double& v : col) v /= n;
  }
  return m;
}

/// Concentrations, 2 rows x `pixels` columns, row-major.
struct ConcentrationMap {
  std::size_t pixels = 0;
  std::vector<double> values;

  ConcentrationMap() = default;
  explicit ConcentrationMap(std::size_t n) : pixels(n), values(2 * n, 0.0) {}

  std::span<const double> row(int s) const {
    return std::span<const double>(values).subspan(static_cast<std::size_t>(s) * pixels, pixels);
  }
  std::span<double> row(int s) {
    return std::span<double>(values).subspan(static_cast<std::size_t>(s) * pixels, pixels);
  }
  double at(int s, std::size_t i) const { return values[static_cast<std::size_t>(s) * pixels + i]; }
  double& at(int s, std::size_t i) { return values[static_cast<std::size_t>(s) * pixels + i]; }
};

struct StainProfile {
  StainMatrix matrix;
  std::array<double, 2> p99{1.0, 1.0};
  SnmfConfig config;
};

struct FitResult {
  StainMatrix matrix;
  ConcentrationMap concentrations;  // over the (possibly subsampled) fit pixels
  std::vector<double> objective;    // after init, then after every outer iteration
  int iterations = 0;
};

enum class NormalizeStatus { ok, background_only };

struct NormalizeResult {
  RgbImage image;
  NormalizeStatus status = NormalizeStatus::ok;
};

inline constexpr double kP99Floor = 1e-6;

// ---------------------------------------------------------------------------
// Optical density
// ---------------------------------------------------------------------------

namespace detail {

inline const std::array<double, 256>& od_table() {
  static const std::array<double, 256> table = [] {
    std::array<double, 256> t{};
    for (int v = 0; v < 256; ++v) t[static_cast<std::size_t>(v)] = -std::log((v + 1) / 256.0);
    return t;
  }();
  return table;
}

}  // namespace detail

/// od = -ln((v + 1) / 256)
inline double to_od(std::uint8_t v) { return detail::od_table()[v]; }

/// v = clamp(round(256 exp(-od) - 1), 0, 255)
inline std::uint8_t to_intensity(double od) {
  const double v = std::round(256.0 * std::exp(-od) - 1.0);
  return static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
}

inline OdImage rgb_to_od(const RgbImage& image) {
  OdImage od(image.width(), image.height());
  auto src = image.data();
  auto dst = od.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = to_od(src[i]);
  return od;
}

inline RgbImage od_to_rgb(const OdImage& od) {
  RgbImage image(od.width(), od.height());
  auto src = od.data();
  auto dst = image.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = to_intensity(src[i]);
  return image;
}

/// Row-major indices of pixels whose largest channel OD reaches `beta`.
inline std::vector<std::size_t> tissue_pixels(const OdImage& od, double beta) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < od.pixel_count(); ++i) {
    const auto p = od.pixel(i);
    if (std::max({p[0], p[1], p[2]}) >= beta) idx.push_back(i);
  }
  return idx;
}

inline std::vector<OdPixel> gather(const OdImage& od, std::span<const std::size_t> indices) {
  std::vector<OdPixel> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) {
    const auto p = od.pixel(i);
    out.push_back({p[0], p[1], p[2]});
  }
  return out;
}

/// Percentile with linear interpolation between closest ranks
/// (rank = p/100 * (n - 1)). Returns 0 for an empty input.
inline double percentile(std::vector<double> values, double p) {
  if (values.empty()) return 0.0;
  const double rank = p / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(rank));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(lo), values.end());
  const double vlo = values[lo];
  double vhi = vlo;
  if (hi != lo) {
    vhi = *std::min_element(values.begin() + static_cast<std::ptrdiff_t>(lo) + 1, values.end());
  }
  return vlo + (rank - static_cast<double>(lo)) * (vhi - vlo);
}

// ---------------------------------------------------------------------------
// Sparse coding (H-step)
// ---------------------------------------------------------------------------

namespace detail {

struct Gram {
  double g00, g01, g11;
};

inline Gram gram(const StainMatrix& w) {
  const auto& a = w.columns[0];
  const auto& b = w.columns[1];
  return {a[0] * a[0] + a[1] * a[1] + a[2] * a[2],
          a[0] * b[0] + a[1] * b[1] + a[2] * b[2],
          b[0] * b[0] + b[1] * b[1] + b[2] * b[2]};
}

inline double dot(const OdPixel& a, const OdPixel& b) {
  return a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
}

/// Non-negative lasso for one pixel by cyclic coordinate descent:
///   min_h ||v - W h||^2 + lambda (h0 + h1),  h >= 0.
/// Each coordinate update is an exact minimization, so starting from
/// (h0, h1) the objective never increases.
inline void code_pixel(const Gram& g, double b0, double b1, double lambda, double& h0, double& h1,
                       int max_sweeps = 500, double tol = 1e-13) {
  const double half = 0.5 * lambda;
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    const double n0 = g.g00 > 0.0 ? std::max(0.0, (b0 - g.g01 * h1 - half) / g.g00) : 0.0;
    const double n1 = g.g11 > 0.0 ? std::max(0.0, (b1 - g.g01 * n0 - half) / g.g11) : 0.0;
    const double delta = std::max(std::abs(n0 - h0), std::abs(n1 - h1));
    h0 = n0;
    h1 = n1;
    if (delta <= tol) break;
  }
}

}  // namespace detail

/// Cold-start non-negative lasso over a list of OD pixels. Each pixel is
/// solved independently, so the result does not depend on iteration order.
inline ConcentrationMap sparse_code(std::span<const OdPixel> pixels, const StainMatrix& matrix,
                                    double lambda) {
  const auto g = detail::gram(matrix);
  ConcentrationMap h(pixels.size());
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    double h0 = 0.0, h1 = 0.0;
    detail::code_pixel(g, detail::dot(matrix.columns[0], pixels[i]),
                       detail::dot(matrix.columns[1], pixels[i]), lambda, h0, h1);
    h.at(0, i) = h0;
    h.at(1, i) = h1;
  }
  return h;
}

inline ConcentrationMap sparse_code(const OdImage& od, const StainMatrix& matrix, double lambda) {
  std::vector<OdPixel> px(od.pixel_count());
  for (std::size_t i = 0; i < px.size(); ++i) {
    const auto p = od.pixel(i);
    px[i] = {p[0], p[1], p[2]};
  }
  return sparse_code(px, matrix, lambda);
}

// ---------------------------------------------------------------------------
// Factorization
// ---------------------------------------------------------------------------

/// ||V - W H||_F^2 + lambda * sum(H)
inline double snmf_objective(std::span<const OdPixel> v, const StainMatrix& w,
                             const ConcentrationMap& h, double lambda) {
  double residual = 0.0;
  double l1 = 0.0;
  for (std::size_t n = 0; n < v.size(); ++n) {
    const double h0 = h.at(0, n), h1 = h.at(1, n);
    for (int c = 0; c < 3; ++c) {
      const double r = v[n][static_cast<std::size_t>(c)] -
                       w.columns[0][static_cast<std::size_t>(c)] * h0 -
                       w.columns[1][static_cast<std::size_t>(c)] * h1;
      residual += r * r;
    }
    l1 += h0 + h1;
  }
  return residual + lambda * l1;
}

/// Columns ordered hematoxylin first: larger red OD first, ties broken by
/// larger green OD. Returns true when the columns were swapped.
inline bool order_columns(StainMatrix& m) {
  const auto& a = m.columns[0];
  const auto& b = m.columns[1];
  const bool swap = b[0] > a[0] || (b[0] == a[0] && b[1] > a[1]);
  if (swap) std::swap(m.columns[0], m.columns[1]);
  return swap;
}

namespace detail {

inline void check_pixels(std::span<const OdPixel> pixels) {
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    for (double v : pixels[i]) {
      if (!std::isfinite(v)) {
        throw Error(ErrorKind::invalid_input,
                    "non-finite optical density at pixel " + std::to_string(i));
      }
    }
  }
}

/// Projected gradient step on W with backtracking. The trial objective is
/// measured after renormalizing the columns and rescaling H inversely, which
/// is the state the step commits to. Returns false when no step lowered the
/// objective; W and H are left untouched in that case.
inline bool update_stains(std::span<const OdPixel> v, StainMatrix& w, ConcentrationMap& h,
                          double lambda, double& objective) {
  // A = V H^T (3x2), B = H H^T (2x2), row sums of H.
  std::array<std::array<double, 2>, 3> a{};
  double b00 = 0.0, b01 = 0.0, b11 = 0.0, s0 = 0.0, s1 = 0.0;
  for (std::size_t n = 0; n < v.size(); ++n) {
    const double h0 = h.at(0, n), h1 = h.at(1, n);
    for (std::size_t c = 0; c < 3; ++c) {
      a[c][0] += v[n][c] * h0;
      a[c][1] += v[n][c] * h1;
    }
    b00 += h0 * h0;
    b01 += h0 * h1;
    b11 += h1 * h1;
    s0 += h0;
    s1 += h1;
  }
  const double tr = b00 + b11;
  const double det = b00 * b11 - b01 * b01;
  const double lmax = 0.5 * tr + std::sqrt(std::max(0.0, 0.25 * tr * tr - det));
  if (!(lmax > 0.0)) return false;

  // grad = -2 (A - W B)
  std::array<OdPixel, 2> grad{};
  for (std::size_t c = 0; c < 3; ++c) {
    const double wb0 = w.columns[0][c] * b00 + w.columns[1][c] * b01;
    const double wb1 = w.columns[0][c] * b01 + w.columns[1][c] * b11;
    grad[0][c] = -2.0 * (a[c][0] - wb0);
    grad[1][c] = -2.0 * (a[c][1] - wb1);
  }

  // Trial stain matrices, best first: the least-squares solution A B^-1 and
  // shortened moves toward it, then plain gradient steps.
  std::vector<std::array<OdPixel, 2>> trials;
  if (det > 1e-12 * tr * tr) {
    const double i00 = b11 / det, i01 = -b01 / det, i11 = b00 / det;
    std::array<OdPixel, 2> ls{};
    for (std::size_t c = 0; c < 3; ++c) {
      ls[0][c] = a[c][0] * i00 + a[c][1] * i01;
      ls[1][c] = a[c][0] * i01 + a[c][1] * i11;
    }
    for (double t : {1.0, 0.5, 0.25}) {
      std::array<OdPixel, 2> trial{};
      for (std::size_t s = 0; s < 2; ++s)
        for (std::size_t c = 0; c < 3; ++c)
          trial[s][c] = w.columns[s][c] + t * (ls[s][c] - w.columns[s][c]);
      trials.push_back(trial);
    }
  }
  double step = 1.0 / (2.0 * lmax);
  for (int k = 0; k < 30; ++k, step *= 0.5) {
    std::array<OdPixel, 2> trial{};
    for (std::size_t s = 0; s < 2; ++s)
      for (std::size_t c = 0; c < 3; ++c) trial[s][c] = w.columns[s][c] - step * grad[s][c];
    trials.push_back(trial);
  }

  const std::array<double, 2> sums{s0, s1};
  for (const auto& trial : trials) {
    StainMatrix raw;
    std::array<double, 2> norms{};
    bool collapsed = false;
    for (std::size_t s = 0; s < 2; ++s) {
      double nn = 0.0;
      for (std::size_t c = 0; c < 3; ++c) {
        raw.columns[s][c] = std::max(0.0, trial[s][c]);
        nn += raw.columns[s][c] * raw.columns[s][c];
      }
      norms[s] = std::sqrt(nn);
      if (!(norms[s] > 1e-12)) collapsed = true;
    }
    if (collapsed) continue;

    // W_raw H == W_unit (D H), so the residual is evaluated with W_raw and
    // the rescaled L1 term is sum_s norm_s * rowsum_s.
    double residual = 0.0;
    for (std::size_t n = 0; n < v.size(); ++n) {
      const double h0 = h.at(0, n), h1 = h.at(1, n);
      for (std::size_t c = 0; c < 3; ++c) {
        const double r = v[n][c] - raw.columns[0][c] * h0 - raw.columns[1][c] * h1;
        residual += r * r;
      }
    }
    const double trial_objective = residual + lambda * (norms[0] * sums[0] + norms[1] * sums[1]);
    if (trial_objective <= objective) {
      for (std::size_t s = 0; s < 2; ++s) {
        for (std::size_t c = 0; c < 3; ++c) w.columns[s][c] = raw.columns[s][c] / norms[s];
        for (double& x : h.row(static_cast<int>(s))) x *= norms[s];
      }
      objective = snmf_objective(v, w, h, lambda);
      return true;
    }
  }
  return false;
}

}  // namespace detail

/// Estimate the stain matrix of a set of OD pixels.
///
/// More than `cfg.max_pixels` inputs are subsampled uniformly (seeded). The
/// returned objective sequence is non-increasing: every H-step is warm-started
/// coordinate descent and every W-step is accepted only if it does not raise
/// the objective.
inline FitResult fit_stain_matrix(std::span<const OdPixel> od_pixels, const SnmfConfig& cfg) {
  cfg.validate();
  detail::check_pixels(od_pixels);
  if (od_pixels.size() < 2) {
    throw Error(ErrorKind::degenerate_input,
                "stain fit needs at least 2 tissue pixels, got " + std::to_string(od_pixels.size()));
  }

  std::vector<OdPixel> sampled;
  std::span<const OdPixel> v = od_pixels;
  if (od_pixels.size() > cfg.max_pixels) {
    Rng rng(mix64(cfg.seed, 0x5a3b));
    auto picks = rng.choose(od_pixels.size(), cfg.max_pixels);
    std::sort(picks.begin(), picks.end());
    sampled.reserve(picks.size());
    for (std::size_t i : picks) sampled.push_back(od_pixels[i]);
    v = sampled;
  }

  FitResult fit;
  StainMatrix& w = fit.matrix;
  w = reference_he();
  {
    Rng rng(mix64(cfg.seed, 0x1a17));
    for (auto& col : w.columns) {
      double nn = 0.0;
      for (double& x : col) {
        x += rng.uniform(0.0, 0.05);
        nn += x * x;
      }
      for (double& x : col) x /= std::sqrt(nn);
    }
  }

  ConcentrationMap& h = fit.concentrations;
  h = ConcentrationMap(v.size());
  auto h_step = [&](const StainMatrix& m, ConcentrationMap& codes) {
    const auto g = detail::gram(m);
    for (std::size_t n = 0; n < v.size(); ++n) {
      double h0 = codes.at(0, n), h1 = codes.at(1, n);
      detail::code_pixel(g, detail::dot(m.columns[0], v[n]), detail::dot(m.columns[1], v[n]),
                         cfg.lambda, h0, h1, 50, 1e-12);
      codes.at(0, n) = h0;
      codes.at(1, n) = h1;
    }
  };

  h_step(w, h);
  double objective = snmf_objective(v, w, h, cfg.lambda);
  fit.objective.push_back(objective);

  // The sparsity term rotates the stains inside their common plane only
  // slowly, so each iteration also tries a jump along the last move
  // (W + a (W - W_prev)), kept only if the re-coded objective is lower.
  double reach = 1.0;
  for (int it = 0; it < cfg.outer_iters; ++it) {
    const StainMatrix before = w;
    detail::update_stains(v, w, h, cfg.lambda, objective);
    h_step(w, h);
    double next = snmf_objective(v, w, h, cfg.lambda);

    StainMatrix jump = w;
    bool valid = true;
    for (std::size_t s = 0; s < 2; ++s) {
      double nn = 0.0;
      for (std::size_t c = 0; c < 3; ++c) {
        auto& x = jump.columns[s][c];
        x = std::max(0.0, x + reach * (x - before.columns[s][c]));
        nn += x * x;
      }
      if (!(nn > 1e-24)) valid = false;
      for (std::size_t c = 0; c < 3; ++c) jump.columns[s][c] /= std::sqrt(nn);
    }
    if (valid && jump != w) {
      ConcentrationMap jh = h;
      h_step(jump, jh);
      const double jumped = snmf_objective(v, jump, jh, cfg.lambda);
      if (jumped < next) {
        w = jump;
        h = std::move(jh);
        next = jumped;
        reach = std::min(reach * 2.0, 64.0);
      } else {
        reach = 1.0;
      }
    }

    fit.objective.push_back(next);
    ++fit.iterations;
    const double change = std::abs(objective - next) / std::max(objective, 1e-300);
    objective = next;
    if (change < cfg.tol) break;
  }

  if (order_columns(w)) {
    for (std::size_t n = 0; n < h.pixels; ++n) std::swap(h.at(0, n), h.at(1, n));
  }
  return fit;
}

/// Per-stain 99th percentiles of `codes`, floored at kP99Floor.
inline std::array<double, 2> concentration_p99(const ConcentrationMap& codes) {
  std::array<double, 2> p{};
  for (int s = 0; s < 2; ++s) {
    const auto row = codes.row(s);
    p[static_cast<std::size_t>(s)] =
        std::max(kP99Floor, percentile(std::vector<double>(row.begin(), row.end()), 99.0));
  }
  return p;
}

/// Fit the target stain matrix and its concentration percentiles.
inline StainProfile build_profile(const RgbImage& target, const SnmfConfig& cfg) {
  cfg.validate();
  const OdImage od = rgb_to_od(target);
  const auto tissue = tissue_pixels(od, cfg.beta);
  const auto pixels = gather(od, tissue);
  const FitResult fit = fit_stain_matrix(pixels, cfg);

  StainProfile profile;
  profile.matrix = fit.matrix;
  profile.p99 = concentration_p99(sparse_code(pixels, fit.matrix, cfg.code_lambda));
  profile.config = cfg;
  return profile;
}

/// Re-render `src` under the profile's stain matrix. Images with fewer than
/// two tissue pixels come back unchanged with status background_only.
inline NormalizeResult normalize_to_profile(const RgbImage& src, const StainProfile& profile,
                                            const SnmfConfig& cfg) {
  cfg.validate();
  const OdImage od = rgb_to_od(src);
  const auto tissue = tissue_pixels(od, cfg.beta);
  if (tissue.size() < 2) return {src, NormalizeStatus::background_only};

  const auto tissue_od = gather(od, tissue);
  const FitResult fit = fit_stain_matrix(tissue_od, cfg);
  const auto source_p99 = concentration_p99(sparse_code(tissue_od, fit.matrix, cfg.code_lambda));

  ConcentrationMap h = sparse_code(od, fit.matrix, cfg.code_lambda);
  std::array<double, 2> scale{};
  for (std::size_t s = 0; s < 2; ++s) {
    scale[s] = std::max(kP99Floor, profile.p99[s]) / source_p99[s];
  }

  OdImage out(src.width(), src.height());
  const auto& tw = profile.matrix.columns;
  for (std::size_t n = 0; n < out.pixel_count(); ++n) {
    const double h0 = h.at(0, n) * scale[0];
    const double h1 = h.at(1, n) * scale[1];
    auto p = out.pixel(n);
    for (std::size_t c = 0; c < 3; ++c) {
      p[c] = std::clamp(tw[0][c] * h0 + tw[1][c] * h1, 0.0, kMaxOd);
    }
  }
  return {od_to_rgb(out), NormalizeStatus::ok};
}

}  // namespace mitopipe::stain
