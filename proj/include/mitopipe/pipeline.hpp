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

/// @file pipeline.hpp
/// @brief normalize -> tile -> ensemble segmentation -> aggregate ->
/// postprocess -> refine.
///
/// Each worker owns one segmentation and one classification ensemble, built
/// by the PredictorFactory when the Pipeline is constructed and reused for
/// every image. Tiles and candidates are handed out by index and their
/// results stored by index, so output does not depend on the worker count.

#pragma once

#include <atomic>
#include <chrono>
#include <exception>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "mitopipe/config.hpp"
#include "mitopipe/eval.hpp"
#include "mitopipe/external.hpp"
#include "mitopipe/postproc.hpp"
#include "mitopipe/predictor.hpp"
#include "mitopipe/refine.hpp"
#include "mitopipe/stain.hpp"
#include "mitopipe/tiling.hpp"

namespace mitopipe::pipeline {

struct PipelineConfig {
  stain::SnmfConfig stain;
  std::string profile_path;                  // empty: skip normalization
  std::optional<stain::StainProfile> profile;  // takes precedence over profile_path
  std::int64_t tile = 512;
  std::int64_t overlap = 75;
  postproc::PostprocConfig postproc;
  refine::RefineConfig refine;
  std::vector<std::string> seg_endpoints;
  std::vector<std::string> cls_endpoints;
  std::chrono::milliseconds timeout = external::kDefaultTimeout;
  bool tta = true;
  int workers = 1;

  void validate() const {
    stain.validate();
    postproc.validate();
    refine.validate();
    if (tile < 1 || overlap < 0 || overlap >= tile) {
      throw Error(ErrorKind::invalid_config, "tiling needs tile >= 1 and 0 <= overlap < tile");
    }
    if (workers < 1) throw Error(ErrorKind::invalid_config, "workers must be >= 1");
    if (timeout.count() < 1) throw Error(ErrorKind::invalid_config, "predictor timeout must be positive");
  }

  std::vector<predict::Tta> tta_list() const {
    if (!tta) return {predict::Tta::identity};
    return {predict::kAllTta.begin(), predict::kAllTta.end()};
  }
};

/// Reads a config file (see config.hpp for the syntax). Keys:
///   profile, workers, tta, timeout_ms
///   [stain]     lambda outer_iters tol max_pixels beta seed code_lambda
///   [tiling]    tile overlap
///   [postproc]  t_seg open_radius min_area
///   [refine]    t_cls
///   [predictors] seg cls   (arrays of endpoint strings)
/// Relative profile paths resolve against the config file's directory.
inline PipelineConfig load_config(config::KeyValueFile& f, const std::string& base_dir = "") {
  PipelineConfig c;
  c.profile_path = f.get_string("profile", "");
  if (!c.profile_path.empty() && c.profile_path.front() != '/' && !base_dir.empty()) {
    c.profile_path = base_dir + "/" + c.profile_path;
  }
  c.workers = static_cast<int>(f.get_int("workers", c.workers));
  c.tta = f.get_bool("tta", c.tta);
  c.timeout = std::chrono::milliseconds(f.get_int("timeout_ms", c.timeout.count()));
  c.stain.lambda = f.get_number("stain.lambda", c.stain.lambda);
  c.stain.outer_iters = static_cast<int>(f.get_int("stain.outer_iters", c.stain.outer_iters));
  c.stain.tol = f.get_number("stain.tol", c.stain.tol);
  c.stain.max_pixels = static_cast<std::size_t>(f.get_int("stain.max_pixels", static_cast<std::int64_t>(c.stain.max_pixels)));
  c.stain.beta = f.get_number("stain.beta", c.stain.beta);
  c.stain.seed = static_cast<std::uint64_t>(f.get_int("stain.seed", static_cast<std::int64_t>(c.stain.seed)));
  c.stain.code_lambda = f.get_number("stain.code_lambda", c.stain.code_lambda);
  c.tile = f.get_int("tiling.tile", c.tile);
  c.overlap = f.get_int("tiling.overlap", c.overlap);
  c.postproc.t_seg = f.get_number("postproc.t_seg", c.postproc.t_seg);
  c.postproc.open_radius = static_cast<int>(f.get_int("postproc.open_radius", c.postproc.open_radius));
  c.postproc.min_area = f.get_int("postproc.min_area", c.postproc.min_area);
  c.refine.t_cls = f.get_number("refine.t_cls", c.refine.t_cls);
  c.seg_endpoints = f.get_list("predictors.seg", c.seg_endpoints);
  c.cls_endpoints = f.get_list("predictors.cls", c.cls_endpoints);
  f.reject_unknown();
  c.validate();
  return c;
}

inline PipelineConfig load_config_file(const std::string& path) {
  auto f = config::KeyValueFile::load(path);
  const auto slash = path.find_last_of('/');
  return load_config(f, slash == std::string::npos ? "" : path.substr(0, slash));
}

struct StageTiming {
  std::string stage;
  double ms = 0.0;
};

struct Report {
  std::vector<StageTiming> timings;
  std::size_t tiles = 0;
  std::size_t candidates = 0;  // before refinement
  std::size_t detections = 0;  // after refinement
  std::vector<std::string> warnings;
};

struct DetectResult {
  std::vector<Detection> detections;
  /// Every candidate with its segmentation and classifier score, in label order.
  std::vector<eval::ScoredCandidate> candidates;
  ProbabilityMap probability;
  Report report;
};

/// Builds one ensemble of each kind; called once per worker.
struct PredictorFactory {
  std::function<predict::Ensemble<predict::SegPredictor>()> seg;
  std::function<predict::Ensemble<predict::ClsPredictor>()> cls;
};

/// Factory connecting to the endpoints named in `cfg`.
inline PredictorFactory endpoint_factory(const PipelineConfig& cfg) {
  const auto seg = cfg.seg_endpoints;
  const auto cls = cfg.cls_endpoints;
  const auto tta = cfg.tta_list();
  const auto timeout = cfg.timeout;
  PredictorFactory f;
  f.seg = [seg, tta, timeout] {
    predict::Ensemble<predict::SegPredictor> e;
    for (const auto& ep : seg) e.members.push_back(std::make_unique<external::ExternalSegPredictor>(ep, timeout));
    e.tta = tta;
    return e;
  };
  f.cls = [cls, tta, timeout] {
    predict::Ensemble<predict::ClsPredictor> e;
    for (const auto& ep : cls) e.members.push_back(std::make_unique<external::ExternalClsPredictor>(ep, timeout));
    e.tta = tta;
    return e;
  };
  return f;
}

namespace detail {

/// Runs fn(worker, item) for items [0, n) on `workers` threads; the first
/// exception (lowest item index) is rethrown after all threads stop.
template <typename Fn>
void parallel_for(int workers, std::size_t n, Fn&& fn) {
  if (n == 0) return;
  const int used = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(workers), n));
  std::atomic<std::size_t> next{0};
  std::atomic<bool> stop{false};
  std::mutex mu;
  std::exception_ptr error;
  std::size_t error_item = SIZE_MAX;
  auto body = [&](int w) {
    for (;;) {
      if (stop.load()) return;
      const std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      try {
        fn(w, i);
      } catch (...) {
        std::lock_guard lock(mu);
        if (i < error_item) {
          error_item = i;
          error = std::current_exception();
        }
        stop = true;
      }
    }
  };
  if (used == 1) {
    body(0);
  } else {
    std::vector<std::thread> threads;
    for (int w = 0; w < used; ++w) threads.emplace_back(body, w);
    for (auto& t : threads) t.join();
  }
  if (error) std::rethrow_exception(error);
}

class StageClock {
 public:
  explicit StageClock(Report& r) : report_(r) {}

  template <typename Fn>
  auto run(const std::string& stage, Fn&& fn) {
    const auto t0 = std::chrono::steady_clock::now();
    auto record = [&] {
      const std::chrono::duration<double, std::milli> dt = std::chrono::steady_clock::now() - t0;
      report_.timings.push_back({stage, dt.count()});
    };
    try {
      if constexpr (std::is_void_v<decltype(fn())>) {
        fn();
        record();
      } else {
        auto out = fn();
        record();
        return out;
      }
    } catch (const Error& e) {
      throw Error(e.kind(), "stage '" + stage + "': " + e.what());
    }
  }

 private:
  Report& report_;
};

}  // namespace detail

class Pipeline {
 public:
  Pipeline(PipelineConfig cfg, const PredictorFactory& factory) : cfg_(std::move(cfg)) {
    cfg_.validate();
    if (!cfg_.profile && !cfg_.profile_path.empty()) cfg_.profile = config::load_profile(cfg_.profile_path);
    try {
      for (int w = 0; w < cfg_.workers; ++w) {
        seg_.push_back(factory.seg());
        cls_.push_back(factory.cls());
      }
    } catch (const Error& e) {
      throw Error(e.kind(), std::string("stage 'connect': ") + e.what());
    }
    if (seg_.front().members.empty()) throw Error(ErrorKind::invalid_config, "no segmentation predictors configured");
    if (cls_.front().members.empty()) throw Error(ErrorKind::invalid_config, "no classification predictors configured");
  }

  /// Convenience: predictors from the endpoints in `cfg`.
  explicit Pipeline(PipelineConfig cfg) : Pipeline(cfg, endpoint_factory(cfg)) {}

  const PipelineConfig& config() const { return cfg_; }

  DetectResult detect(const RgbImage& input) {
    DetectResult out;
    detail::StageClock clock(out.report);

    const RgbImage image = clock.run("normalize", [&] {
      if (!cfg_.profile) {
        out.report.warnings.push_back("no stain profile configured; normalization skipped");
        return input;
      }
      auto r = stain::normalize_to_profile(input, *cfg_.profile, cfg_.profile->config);
      if (r.status == stain::NormalizeStatus::background_only) {
        out.report.warnings.push_back("background-only image; normalization skipped");
      }
      return std::move(r.image);
    });

    // Images smaller than a tile are reflect-padded on the right / bottom.
    const auto pw = std::max(image.width(), cfg_.tile), ph = std::max(image.height(), cfg_.tile);
    const RgbImage padded =
        (pw == image.width() && ph == image.height()) ? image : crop(image, Rect{0, 0, pw, ph}, true);
    const auto grid = clock.run("tile", [&] { return tiling::plan_tiles(pw, ph, cfg_.tile, cfg_.overlap); });
    out.report.tiles = grid.tiles.size();

    std::vector<ProbabilityMap> maps(grid.tiles.size());
    clock.run("segment", [&] {
      detail::parallel_for(cfg_.workers, grid.tiles.size(), [&](int w, std::size_t k) {
        const auto& t = grid.tiles[k];
        maps[k] = predict::ensemble_seg(seg_[static_cast<std::size_t>(w)], crop(padded, t, false), t);
      });
    });

    out.probability = clock.run("aggregate", [&] {
      auto full = tiling::aggregate(grid, maps);
      return full.width() == image.width() && full.height() == image.height()
                 ? full
                 : crop(full, Rect{0, 0, image.width(), image.height()}, false);
    });

    const auto candidates =
        clock.run("postprocess", [&] { return postproc::extract_candidates(out.probability, cfg_.postproc); });
    out.report.candidates = candidates.size();

    std::vector<double> scores(candidates.size());
    clock.run("refine", [&] {
      detail::parallel_for(cfg_.workers, candidates.size(), [&](int w, std::size_t i) {
        scores[i] = refine::score_candidate(image, candidates[i], i, cls_[static_cast<std::size_t>(w)],
                                            cfg_.refine.patch);
      });
    });
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      const auto& c = candidates[i];
      out.candidates.push_back({c.x, c.y, c.score, scores[i]});
      if (scores[i] >= cfg_.refine.t_cls) out.detections.push_back({c.x, c.y, scores[i]});
    }
    out.report.detections = out.detections.size();
    return out;
  }

 private:
  PipelineConfig cfg_;
  std::vector<predict::Ensemble<predict::SegPredictor>> seg_;
  std::vector<predict::Ensemble<predict::ClsPredictor>> cls_;
};

/// One-shot detection with endpoint predictors.
inline DetectResult detect(const RgbImage& image, const PipelineConfig& cfg) {
  Pipeline p(cfg);
  return p.detect(image);
}

inline nlohmann::json to_json(const Report& r) {
  nlohmann::json timings = nlohmann::json::object();
  for (const auto& t : r.timings) timings[t.stage] = t.ms;
  return {{"timings_ms", timings},
          {"tiles", r.tiles},
          {"candidates", r.candidates},
          {"detections", r.detections},
          {"warnings", r.warnings}};
}

}  // namespace mitopipe::pipeline
