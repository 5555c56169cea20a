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

/// @file cli.hpp
/// @brief The `mitopipe` command line: fit-target, normalize, detect,
/// evaluate, folds, sample-epoch, sweep-thresholds.
///
/// Exit status: 0 success, 1 usage error, 2 data / config / i/o error,
/// 3 inference or protocol error. Files are written to a temporary sibling
/// and renamed into place, so a failed command leaves no partial output.

#pragma once

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mitopipe/config.hpp"
#include "mitopipe/eval.hpp"
#include "mitopipe/image_io.hpp"
#include "mitopipe/pipeline.hpp"
#include "mitopipe/sampler.hpp"
#include "mitopipe/stain.hpp"

#ifndef MITOPIPE_VERSION
#define MITOPIPE_VERSION "0.0.0"
#endif

namespace mitopipe::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitInference = 3;

inline int exit_code(ErrorKind kind) {
  return kind == ErrorKind::inference || kind == ErrorKind::protocol ? kExitInference : kExitData;
}

namespace detail {

namespace fs = std::filesystem;

/// Collects output in memory and publishes it with a rename on commit().
class AtomicFile {
 public:
  explicit AtomicFile(std::string path) : path_(std::move(path)) {}
  std::ostream& stream() { return buf_; }

  void commit() {
    const fs::path target(path_);
    if (target.has_parent_path() && !fs::exists(target.parent_path())) {
      throw Error(ErrorKind::io, "output directory " + target.parent_path().string() + " does not exist");
    }
    const std::string tmp = path_ + ".tmp";
    {
      std::ofstream out(tmp, std::ios::binary);
      if (!out) throw Error(ErrorKind::io, "cannot create " + tmp);
      out << buf_.str();
      out.close();
      if (!out) {
        std::error_code ec;
        fs::remove(tmp, ec);
        throw Error(ErrorKind::io, "cannot write " + tmp);
      }
    }
    std::error_code ec;
    fs::rename(tmp, path_, ec);
    if (ec) {
      fs::remove(tmp, ec);
      throw Error(ErrorKind::io, "cannot move output into place at " + path_);
    }
  }

 private:
  std::string path_;
  std::ostringstream buf_;
};

/// Writes `text` to `path`, or to `out` when path is empty or "-".
inline void emit(const std::string& path, const std::string& text, std::ostream& out) {
  if (path.empty() || path == "-") {
    out << text;
    return;
  }
  AtomicFile f(path);
  f.stream() << text;
  f.commit();
}

/// *.png files of `dir` in lexicographic order.
inline std::vector<fs::path> list_pngs(const std::string& dir) {
  if (!fs::is_directory(dir)) throw Error(ErrorKind::io, "input directory " + dir + " does not exist");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    auto ext = e.path().extension().string();
    for (auto& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (ext == ".png") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end(), [](const fs::path& a, const fs::path& b) {
    return a.filename().string() < b.filename().string();
  });
  return files;
}

inline std::vector<double> parse_list(const std::string& s, const std::string& what) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw Error(ErrorKind::invalid_config, what + ": cannot parse '" + item + "'");
    }
  }
  if (out.empty()) throw Error(ErrorKind::invalid_config, what + " is empty");
  return out;
}

inline std::vector<std::string> read_list_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::io, "cannot open " + path);
  return sampler::read_patch_list(in);
}

inline nlohmann::json report_json(const eval::DatasetReport& r, double radius, eval::Matcher matcher) {
  nlohmann::json images = nlohmann::json::array();
  for (const auto& im : r.images) {
    const auto m = eval::prf1(im.tp, im.fp, im.fn);
    images.push_back({{"image_id", im.image_id},
                      {"tp", im.tp},
                      {"fp", im.fp},
                      {"fn", im.fn},
                      {"recall", m.recall},
                      {"precision", m.precision},
                      {"f1", m.f1}});
  }
  return {{"recall", r.metrics.recall},
          {"precision", r.metrics.precision},
          {"f1", r.metrics.f1},
          {"tp", r.tp},
          {"fp", r.fp},
          {"fn", r.fn},
          {"radius", radius},
          {"matcher", std::string(eval::to_string(matcher))},
          {"images", images}};
}

}  // namespace detail

/// Runs one command. `args` excludes the program name.
inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Mitosis detection pipeline", "mitopipe"};
  app.set_version_flag("--version", std::string("mitopipe ") + MITOPIPE_VERSION);
  app.require_subcommand(1, 1);

  // fit-target
  std::string fit_image, fit_out, fit_config;
  stain::SnmfConfig fit_cfg;
  auto* fit = app.add_subcommand("fit-target", "Fit a stain profile to a target image");
  fit->add_option("--image", fit_image, "Target PNG")->required();
  fit->add_option("--out", fit_out, "Profile JSON to write")->required();
  fit->add_option("--config", fit_config, "Config file ([stain] section)");
  fit->add_option("--lambda", fit_cfg.lambda, "Sparsity weight");
  fit->add_option("--seed", fit_cfg.seed, "Random seed");
  fit->add_option("--max-pixels", fit_cfg.max_pixels, "Pixel subsample size");

  // normalize
  std::string norm_profile, norm_in, norm_out;
  auto* norm = app.add_subcommand("normalize", "Normalize every PNG in a directory");
  norm->add_option("--profile", norm_profile, "Profile JSON")->required();
  norm->add_option("--in", norm_in, "Input directory")->required();
  norm->add_option("--out", norm_out, "Output directory")->required();

  // detect
  std::string det_config, det_in, det_out, det_report, det_scored, det_profile;
  std::optional<int> det_workers;
  std::optional<double> det_tseg, det_tcls;
  std::vector<std::string> det_seg, det_cls;
  bool det_no_tta = false;
  auto* det = app.add_subcommand("detect", "Detect mitoses in every PNG in a directory");
  det->add_option("--config", det_config, "Config file (falls back to $MITOPIPE_CONFIG)");
  det->add_option("--in", det_in, "Input directory")->required();
  det->add_option("--out", det_out, "Detections CSV")->required();
  det->add_option("--report", det_report, "Report JSON (default: <out>.report.json)");
  det->add_option("--scored", det_scored, "Also write every candidate with both scores");
  det->add_option("--profile", det_profile, "Stain profile JSON");
  det->add_option("--workers", det_workers, "Worker threads")->check(CLI::PositiveNumber);
  det->add_option("--t-seg", det_tseg, "Segmentation threshold");
  det->add_option("--t-cls", det_tcls, "Classification threshold");
  det->add_option("--seg", det_seg, "Segmentation endpoint (repeatable)");
  det->add_option("--cls", det_cls, "Classification endpoint (repeatable)");
  det->add_flag("--no-tta", det_no_tta, "Disable test-time augmentation");

  // evaluate
  std::string ev_pred, ev_gt, ev_out, ev_matcher = "optimal";
  double ev_radius = eval::kDefaultRadius;
  auto* ev = app.add_subcommand("evaluate", "Match detections to ground truth");
  ev->add_option("--pred", ev_pred, "Detections CSV")->required();
  ev->add_option("--gt", ev_gt, "Ground-truth CSV")->required();
  ev->add_option("--radius", ev_radius, "Match radius in pixels");
  ev->add_option("--matcher", ev_matcher, "optimal | greedy");
  ev->add_option("--out", ev_out, "Metrics JSON (default: stdout)");

  // folds
  int folds_n = 150;
  std::string folds_out;
  auto* folds = app.add_subcommand("folds", "List the three scanner-block folds");
  folds->add_option("--n", folds_n, "Number of images (ids 1..n)");
  folds->add_option("--out", folds_out, "Fold JSON (default: stdout)");

  // sample-epoch
  std::string se_pos, se_neg, se_out;
  std::uint64_t se_seed = 0, se_epoch = 0;
  auto* se = app.add_subcommand("sample-epoch", "Write one balanced training manifest");
  se->add_option("--pos", se_pos, "Positive patch list")->required();
  se->add_option("--neg", se_neg, "Negative patch list")->required();
  se->add_option("--seed", se_seed, "Random seed");
  se->add_option("--epoch", se_epoch, "Epoch number");
  se->add_option("--out", se_out, "Manifest CSV (default: stdout)");

  // sweep-thresholds
  std::string sw_pred, sw_gt, sw_out, sw_tseg = "0.3,0.4,0.5", sw_tcls = "0.5,0.6,0.7", sw_matcher = "optimal";
  double sw_radius = eval::kDefaultRadius;
  auto* sw = app.add_subcommand("sweep-thresholds", "F1 over a grid of (t_seg, t_cls)");
  sw->add_option("--pred-scored", sw_pred, "Scored candidates CSV")->required();
  sw->add_option("--gt", sw_gt, "Ground-truth CSV")->required();
  sw->add_option("--t-seg", sw_tseg, "Comma-separated t_seg values");
  sw->add_option("--t-cls", sw_tcls, "Comma-separated t_cls values");
  sw->add_option("--radius", sw_radius, "Match radius in pixels");
  sw->add_option("--matcher", sw_matcher, "optimal | greedy");
  sw->add_option("--out", sw_out, "Grid CSV (default: stdout)");

  std::vector<std::string> argv(args.rbegin(), args.rend());
  try {
    app.parse(argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      app.exit(e, out, err);
      return kExitOk;
    }
    err << "error: " << e.what() << "\nrun with --help for usage\n";
    return kExitUsage;
  }

  try {
    if (*fit) {
      if (!fit_config.empty()) {
        auto f = config::KeyValueFile::load(fit_config);
        const auto c = pipeline::load_config(f);
        if (fit->count("--lambda") == 0) fit_cfg.lambda = c.stain.lambda;
        if (fit->count("--seed") == 0) fit_cfg.seed = c.stain.seed;
        if (fit->count("--max-pixels") == 0) fit_cfg.max_pixels = c.stain.max_pixels;
        fit_cfg.outer_iters = c.stain.outer_iters;
        fit_cfg.tol = c.stain.tol;
        fit_cfg.beta = c.stain.beta;
        fit_cfg.code_lambda = c.stain.code_lambda;
      }
      const auto profile = stain::build_profile(io::read_rgb(fit_image), fit_cfg);
      detail::emit(fit_out, config::to_json(profile).dump(2) + "\n", out);
      err << "fit-target: wrote " << fit_out << '\n';
    } else if (*norm) {
      const auto profile = config::load_profile(norm_profile);
      const auto files = detail::list_pngs(norm_in);
      std::filesystem::create_directories(norm_out);
      for (const auto& f : files) {
        const auto r = stain::normalize_to_profile(io::read_rgb(f.string()), profile, profile.config);
        const auto target = (std::filesystem::path(norm_out) / f.filename()).string();
        io::write_rgb(target + ".tmp", r.image);
        std::filesystem::rename(target + ".tmp", target);
        err << "normalize: " << f.filename().string()
            << (r.status == stain::NormalizeStatus::background_only ? " (background only, unchanged)" : "") << '\n';
      }
    } else if (*det) {
      if (det_config.empty()) {
        if (const char* env = std::getenv("MITOPIPE_CONFIG")) det_config = env;
      }
      pipeline::PipelineConfig cfg;
      if (!det_config.empty()) cfg = pipeline::load_config_file(det_config);
      if (!det_profile.empty()) cfg.profile_path = det_profile;
      if (det_workers) cfg.workers = *det_workers;
      if (det_tseg) cfg.postproc.t_seg = *det_tseg;
      if (det_tcls) cfg.refine.t_cls = *det_tcls;
      if (!det_seg.empty()) cfg.seg_endpoints = det_seg;
      if (!det_cls.empty()) cfg.cls_endpoints = det_cls;
      if (det_no_tta) cfg.tta = false;
      cfg.validate();
      const auto files = detail::list_pngs(det_in);

      pipeline::Pipeline pipe(cfg);
      eval::DetectionSet dets;
      eval::ScoredSet scored;
      nlohmann::json images = nlohmann::json::object();
      for (const auto& f : files) {
        const std::string id = f.stem().string();
        const auto image = io::read_rgb(f.string());
        pipeline::DetectResult r;
        try {
          r = pipe.detect(image);
        } catch (const Error& e) {
          throw Error(e.kind(), f.filename().string() + ": " + e.what());
        }
        dets[id] = r.detections;
        scored[id] = r.candidates;
        images[id] = pipeline::to_json(r.report);
        for (const auto& w : r.report.warnings) err << "detect: " << id << ": warning: " << w << '\n';
        err << "detect: " << id << ": " << r.report.detections << " detections from " << r.report.candidates
            << " candidates\n";
      }
      std::ostringstream csv;
      eval::write_detections(csv, dets);
      std::string scored_text;
      if (!det_scored.empty()) {
        std::ostringstream s;
        eval::write_scored(s, scored);
        scored_text = s.str();
      }
      const nlohmann::json report{{"version", MITOPIPE_VERSION},
                                  {"images", images},
                                  {"workers", cfg.workers},
                                  {"tta", cfg.tta},
                                  {"t_seg", cfg.postproc.t_seg},
                                  {"t_cls", cfg.refine.t_cls}};
      if (det_report.empty()) {
        auto p = std::filesystem::path(det_out);
        det_report = p.replace_extension(".report.json").string();
      }
      // All outputs are built before any is published.
      detail::emit(det_out, csv.str(), out);
      if (!det_scored.empty()) detail::emit(det_scored, scored_text, out);
      detail::emit(det_report, report.dump(2) + "\n", out);
    } else if (*ev) {
      const auto matcher = eval::parse_matcher(ev_matcher);
      const auto r = eval::evaluate(eval::read_detections_file(ev_pred), eval::read_points_file(ev_gt), ev_radius,
                                    matcher);
      detail::emit(ev_out, detail::report_json(r, ev_radius, matcher).dump(2) + "\n", out);
    } else if (*folds) {
      nlohmann::json j = nlohmann::json::array();
      for (const auto& s : sampler::make_folds(folds_n)) {
        j.push_back({{"fold", s.fold_id}, {"val", s.val_ids}, {"train", s.train_ids}});
      }
      detail::emit(folds_out, j.dump() + "\n", out);
    } else if (*se) {
      const auto m = sampler::sample_epoch(detail::read_list_file(se_pos), detail::read_list_file(se_neg), se_epoch,
                                           se_seed);
      std::ostringstream s;
      sampler::write_manifest(s, m);
      detail::emit(se_out, s.str(), out);
    } else if (*sw) {
      const auto matcher = eval::parse_matcher(sw_matcher);
      const auto cells = eval::sweep_thresholds(eval::read_scored_file(sw_pred), eval::read_points_file(sw_gt),
                                                detail::parse_list(sw_tseg, "--t-seg"),
                                                detail::parse_list(sw_tcls, "--t-cls"), sw_radius, matcher);
      std::ostringstream s;
      s << "t_seg,t_cls,tp,fp,fn,recall,precision,f1\n";
      for (const auto& c : cells) {
        const auto& r = c.report;
        s << eval::format_fixed(c.t_seg, 2) << ',' << eval::format_fixed(c.t_cls, 2) << ',' << r.tp << ','
          << r.fp << ',' << r.fn << ',' << eval::format_fixed(r.metrics.recall, 3) << ','
          << eval::format_fixed(r.metrics.precision, 3) << ',' << eval::format_fixed(r.metrics.f1, 3) << '\n';
      }
      detail::emit(sw_out, s.str(), out);
    }
  } catch (const Error& e) {
    err << "error (" << to_string(e.kind()) << "): " << e.what() << '\n';
    return exit_code(e.kind());
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error (i/o error): " << e.what() << '\n';
    return kExitData;
  }
  return kExitOk;
}

}  // namespace mitopipe::cli
