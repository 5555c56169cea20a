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

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "mitopipe/cli.hpp"
#include "support/synthetic.hpp"
#include "support/rates.hpp"

namespace mitopipe::cli {
namespace {

namespace fs = std::filesystem;

const std::string kServer = MITOPIPE_MODEL_SERVER;

struct Run {
  int code = 0;
  std::string out, err;
};

Run run_cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  Run r;
  r.code = run(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), {});
}

/// Light background with dark disks (detected by the darkness server) and
/// one mid-gray disk the classifier rejects.
RgbImage disk_image(std::int64_t w, std::int64_t h, const std::vector<testing::Disk>& dark,
                    const testing::Disk& gray) {
  RgbImage img(w, h, 235);
  for (std::int64_t y = 0; y < h; ++y) {
    for (std::int64_t x = 0; x < w; ++x) {
      for (const auto& d : dark) {
        if (std::hypot(x - d.x, y - d.y) <= d.r)
          for (int c = 0; c < 3; ++c) img.at(x, y, c) = 40;
      }
      if (std::hypot(x - gray.x, y - gray.y) <= gray.r)
        for (int c = 0; c < 3; ++c) img.at(x, y, c) = 120;
    }
  }
  return img;
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("mitopipe_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  void write(const std::string& name, const std::string& text) const { std::ofstream(dir_ / name) << text; }

  /// Three small images under in/.
  std::string make_inputs() const {
    fs::create_directories(dir_ / "in");
    io::write_rgb((dir_ / "in" / "b.png").string(),
                  disk_image(600, 560, {{100, 120, 12}, {400, 300, 14}, {250, 480, 11}}, {500, 100, 12}));
    io::write_rgb((dir_ / "in" / "a.png").string(), disk_image(300, 260, {{150, 130, 13}}, {40, 40, 10}));
    io::write_rgb((dir_ / "in" / "c.png").string(), RgbImage(200, 200, 235));
    return (dir_ / "in").string();
  }

  std::string seg_endpoint() const { return "exec:" + kServer + " --mode darkness"; }

  fs::path dir_;
};

TEST_F(CliTest, VersionAndHelp) {
  auto r = run_cli({"--version"});
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find(MITOPIPE_VERSION), std::string::npos);
  r = run_cli({"--help"});
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("sweep-thresholds"), std::string::npos);
  r = run_cli({"detect", "--help"});
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("--workers"), std::string::npos);
}

TEST_F(CliTest, UsageErrorsExitOne) {
  EXPECT_EQ(run_cli({}).code, 1);
  EXPECT_EQ(run_cli({"frobnicate"}).code, 1);
  EXPECT_EQ(run_cli({"evaluate", "--pred", "x.csv"}).code, 1);
  EXPECT_EQ(run_cli({"folds", "--n", "abc"}).code, 1);
  EXPECT_EQ(run_cli({"folds", "evaluate"}).code, 1);
}

TEST_F(CliTest, EvaluatePerfectAndDataErrors) {
  write("gt.csv", "image_id,x,y\nimg1,10,10\nimg1,200,200\nimg2,50,60\n");
  write("pred.csv", "image_id,x,y,score\nimg1,12,11,0.9\nimg1,199,203,0.8\nimg2,50,60,0.7\n");
  auto r = run_cli({"evaluate", "--pred", path("pred.csv"), "--gt", path("gt.csv"), "--radius", "30"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j["f1"].get<double>(), 1.0);
  EXPECT_EQ(j["images"].size(), 2u);

  EXPECT_EQ(run_cli({"evaluate", "--pred", path("missing.csv"), "--gt", path("gt.csv")}).code, 2);
  write("bad.csv", "image_id,x,y,score\nimg1,abc,1,0.5\n");
  r = run_cli({"evaluate", "--pred", path("bad.csv"), "--gt", path("gt.csv")});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("bad.csv:2"), std::string::npos) << r.err;
  EXPECT_EQ(run_cli({"evaluate", "--pred", path("pred.csv"), "--gt", path("gt.csv"), "--matcher", "x"}).code, 2);
}

TEST_F(CliTest, EvaluateHybridOperatingPointF1) {
  const auto c = testing::counts_for(0.771, 0.801);
  std::ostringstream gt, pred;
  gt << "image_id,x,y\n";
  pred << "image_id,x,y,score\n";
  std::size_t k = 0;
  auto next = [&] {
    const auto i = k++;
    return std::pair<double, double>(100.0 * static_cast<double>(i % 50), 100.0 * static_cast<double>(i / 50));
  };
  for (std::size_t i = 0; i < c.tp; ++i) {
    const auto [x, y] = next();
    gt << "s," << x << ',' << y << '\n';
    pred << "s," << x + 1 << ',' << y << ",0.9\n";
  }
  for (std::size_t i = 0; i < c.fp; ++i) {
    const auto [x, y] = next();
    pred << "s," << x << ',' << y << ",0.9\n";
  }
  for (std::size_t i = 0; i < c.fn; ++i) {
    const auto [x, y] = next();
    gt << "s," << x << ',' << y << '\n';
  }
  write("gt.csv", gt.str());
  write("pred.csv", pred.str());
  const auto r = run_cli({"evaluate", "--pred", path("pred.csv"), "--gt", path("gt.csv"), "--out", path("m.json")});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = nlohmann::json::parse(slurp(path("m.json")));
  EXPECT_NEAR(j["recall"].get<double>(), 0.771, 0.0005);
  EXPECT_NEAR(j["precision"].get<double>(), 0.801, 0.0005);
  EXPECT_NEAR(j["f1"].get<double>(), 0.786, 0.0005);
}

TEST_F(CliTest, FoldsAndSampleEpoch) {
  auto r = run_cli({"folds", "--n", "150"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = nlohmann::json::parse(r.out);
  ASSERT_EQ(j.size(), 3u);
  EXPECT_EQ(j[1]["val"].front().get<int>(), 51);
  EXPECT_EQ(j[1]["val"].back().get<int>(), 100);
  EXPECT_EQ(run_cli({"folds", "--n", "100"}).code, 2);

  write("pos.txt", "p0.png\np1.png\np2.png\n");
  write("neg.txt", "n0.png\nn1.png\nn2.png\nn3.png\nn4.png\n");
  const std::vector<std::string> args{"sample-epoch", "--pos", path("pos.txt"), "--neg", path("neg.txt"),
                                      "--seed",       "7",     "--epoch",       "3"};
  r = run_cli(args);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out, run_cli(args).out);
  std::ostringstream expected;
  sampler::write_manifest(expected, sampler::sample_epoch({"p0.png", "p1.png", "p2.png"},
                                                          {"n0.png", "n1.png", "n2.png", "n3.png", "n4.png"}, 3, 7));
  EXPECT_EQ(r.out, expected.str());
  EXPECT_EQ(run_cli({"sample-epoch", "--pos", path("none.txt"), "--neg", path("neg.txt")}).code, 2);
}

TEST_F(CliTest, SweepThresholdsGrid) {
  write("gt.csv", "image_id,x,y\na,10,10\na,200,200\n");
  write("scored.csv",
        "image_id,x,y,seg_score,cls_score\n"
        "a,10,10,0.9,0.9\n"
        "a,200,200,0.45,0.65\n"
        "a,400,400,0.8,0.3\n");
  const auto r = run_cli({"sweep-thresholds", "--pred-scored", path("scored.csv"), "--gt", path("gt.csv"),
                          "--t-seg", "0.4,0.5", "--t-cls", "0.2,0.6"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out,
            "t_seg,t_cls,tp,fp,fn,recall,precision,f1\n"
            "0.40,0.20,2,1,0,1.000,0.667,0.800\n"
            "0.40,0.60,2,0,0,1.000,1.000,1.000\n"
            "0.50,0.20,1,1,1,0.500,0.500,0.500\n"
            "0.50,0.60,1,0,1,0.500,1.000,0.667\n");
  EXPECT_EQ(run_cli({"sweep-thresholds", "--pred-scored", path("scored.csv"), "--gt", path("gt.csv"), "--t-seg",
                     "0.4,x"})
                .code,
            2);
}

TEST_F(CliTest, DetectWritesCsvReportAndScored) {
  const auto in = make_inputs();
  const auto r = run_cli({"detect", "--in", in, "--out", path("det.csv"), "--scored", path("scored.csv"), "--seg",
                          seg_endpoint(), "--cls", seg_endpoint(), "--no-tta"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto dets = eval::read_detections_file(path("det.csv"));
  ASSERT_EQ(dets.size(), 2u);
  EXPECT_EQ(dets.at("a").size(), 1u);
  EXPECT_EQ(dets.at("b").size(), 3u);
  EXPECT_NEAR(dets.at("a")[0].x, 150.0, 1.0);
  const auto scored = eval::read_scored_file(path("scored.csv"));
  EXPECT_EQ(scored.at("b").size(), 4u);
  const auto report = nlohmann::json::parse(slurp(path("det.report.json")));
  EXPECT_EQ(report["images"]["b"]["candidates"].get<int>(), 4);
  EXPECT_EQ(report["images"]["b"]["detections"].get<int>(), 3);
  EXPECT_EQ(report["images"]["c"]["detections"].get<int>(), 0);
  // Lexicographic processing order in the log.
  EXPECT_LT(r.err.find("detect: a:"), r.err.find("detect: b:"));
  EXPECT_LT(r.err.find("detect: b:"), r.err.find("detect: c:"));
}

TEST_F(CliTest, DetectIsByteIdenticalAcrossWorkerCounts) {
  const auto in = make_inputs();
  std::string first;
  for (const char* workers : {"1", "4", "1"}) {
    const auto r = run_cli({"detect", "--in", in, "--out", path("det.csv"), "--seg", seg_endpoint(), "--cls",
                            seg_endpoint(), "--workers", workers});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto text = slurp(path("det.csv"));
    if (first.empty()) first = text;
    EXPECT_EQ(text, first) << "workers " << workers;
  }
  EXPECT_NE(first.find("\nb,"), std::string::npos);
}

TEST_F(CliTest, DetectFailuresLeaveNoPartialOutput) {
  const auto in = make_inputs();
  auto r = run_cli({"detect", "--in", in, "--out", path("det.csv"), "--seg", "tcp:127.0.0.1:1", "--cls",
                    seg_endpoint()});
  EXPECT_EQ(r.code, 3) << r.err;
  EXPECT_FALSE(fs::exists(path("det.csv")));
  EXPECT_FALSE(fs::exists(path("det.csv.tmp")));

  // a.png has two candidates; the classifier dies while scoring b.png.
  r = run_cli({"detect", "--in", in, "--out", path("det.csv"), "--seg", seg_endpoint(), "--cls",
               "exec:" + kServer + " --mode darkness --die-after 2", "--no-tta"});
  EXPECT_EQ(r.code, 3) << r.err;
  EXPECT_NE(r.err.find("b.png"), std::string::npos) << r.err;
  EXPECT_FALSE(fs::exists(path("det.csv")));

  r = run_cli({"detect", "--in", in, "--out", path("det.csv"), "--seg", "exec:" + kServer + " --mode error",
               "--cls", seg_endpoint()});
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("stage 'segment'"), std::string::npos) << r.err;

  r = run_cli({"detect", "--in", path("nowhere"), "--out", path("det.csv"), "--seg", seg_endpoint(), "--cls",
               seg_endpoint()});
  EXPECT_EQ(r.code, 2);
  r = run_cli({"detect", "--in", in, "--out", path("det.csv"), "--seg", "bogus", "--cls", seg_endpoint()});
  EXPECT_EQ(r.code, 2);
  EXPECT_FALSE(fs::exists(path("det.csv")));
}

TEST_F(CliTest, DetectReadsConfigAndEnvironmentFallback) {
  const auto in = make_inputs();
  write("c.toml", "workers = 2\ntta = false\n[refine]\nt_cls = 0.4\n[predictors]\nseg = [\"" + seg_endpoint() +
                      "\"]\ncls = [\"" + seg_endpoint() + "\"]\n");
  ::setenv("MITOPIPE_CONFIG", path("c.toml").c_str(), 1);
  auto r = run_cli({"detect", "--in", in, "--out", path("det.csv")});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto from_file = eval::read_detections_file(path("det.csv"));
  // A flag overrides the file.
  r = run_cli({"detect", "--in", in, "--out", path("det2.csv"), "--t-cls", "0.6"});
  ::unsetenv("MITOPIPE_CONFIG");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto from_flag = eval::read_detections_file(path("det2.csv"));
  std::size_t n_file = 0, n_flag = 0;
  for (const auto& [id, v] : from_file) n_file += v.size();
  for (const auto& [id, v] : from_flag) n_flag += v.size();
  EXPECT_GT(n_file, n_flag);  // the gray disk (score 0.5) passes t_cls 0.4
  EXPECT_EQ(n_flag, 4u);

  write("bad.toml", "workers = 0\n");
  EXPECT_EQ(run_cli({"detect", "--config", path("bad.toml"), "--in", in, "--out", path("d.csv")}).code, 2);
}

TEST_F(CliTest, FitTargetThenNormalizeMatchesLibrary) {
  stain::ConcentrationMap h = testing::tissue_field(160, 120, 3);
  const auto target = testing::render(testing::alternate_he(), h, 160, 120);
  const auto source = testing::render(stain::reference_he(), h, 160, 120);
  io::write_rgb(path("target.png"), target);
  fs::create_directories(dir_ / "src");
  io::write_rgb((dir_ / "src" / "s1.png").string(), source);
  io::write_rgb((dir_ / "src" / "blank.png").string(), RgbImage(40, 40, 255));

  auto r = run_cli({"fit-target", "--image", path("target.png"), "--out", path("profile.json"), "--seed", "3"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto profile = config::load_profile(path("profile.json"));
  EXPECT_EQ(profile.config.seed, 3u);

  r = run_cli({"normalize", "--profile", path("profile.json"), "--in", (dir_ / "src").string(), "--out",
               (dir_ / "dst").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.err.find("blank.png (background only"), std::string::npos) << r.err;
  const auto expected = stain::normalize_to_profile(source, profile, profile.config).image;
  EXPECT_EQ(io::read_rgb((dir_ / "dst" / "s1.png").string()), expected);
  EXPECT_EQ(io::read_rgb((dir_ / "dst" / "blank.png").string()), RgbImage(40, 40, 255));

  EXPECT_EQ(run_cli({"fit-target", "--image", path("nope.png"), "--out", path("p.json")}).code, 2);
  EXPECT_EQ(run_cli({"normalize", "--profile", path("nope.json"), "--in", (dir_ / "src").string(), "--out",
                     (dir_ / "dst").string()})
                .code,
            2);
}

}  // namespace
}  // namespace mitopipe::cli
