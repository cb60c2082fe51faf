/* Copyright 2026 The polyrefine Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

// End-to-end checks of the command-line tool, run as a subprocess.

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "polyrefine/pipeline/checkpoint.hpp"
#include "polyrefine/pipeline/coco.hpp"
#include "polyrefine/pipeline/config.hpp"
#include "polyrefine/pipeline/io.hpp"

#ifndef POLYREFINE_CLI
#error "POLYREFINE_CLI must name the command-line binary"
#endif

namespace pr = polyrefine;
namespace fs = std::filesystem;

namespace {

struct CliRun {
  int code = -1;
  std::string err;
};

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() /
           ("polyrefine_cli_" + std::to_string(::getpid()) + "_" + info->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  fs::path at(const std::string& name) const { return dir_ / name; }

  CliRun run(const std::string& args) const {
    const fs::path err = dir_ / "stderr.txt";
    const std::string cmd = std::string(POLYREFINE_CLI) + " " + args + " > " +
                            (dir_ / "stdout.txt").string() + " 2> " + err.string();
    const int status = std::system(cmd.c_str());
    CliRun r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.err = pr::read_text(err);
    return r;
  }

  std::string out() const { return pr::read_text(dir_ / "stdout.txt"); }

  // Small dataset and a config small enough to train in seconds.
  void make_data(const std::string& name = "data", int scenes = 3) const {
    ASSERT_EQ(run("generate-data --scenes " + std::to_string(scenes) + " --seed 4 --hole-prob 0.5 -o " +
                  at(name).string())
                  .code,
              0);
  }
  fs::path small_config() const {
    pr::TrainingConfig c = pr::TrainingConfig::desk();
    c.model.channels = 16;
    c.model.num_heads = 2;
    c.model.num_proposals = 4;
    c.model.num_vertices = 16;
    c.model.backbone_widths = {4, 8, 8, 8, 8};
    c.batch_size = 2;
    const fs::path p = at("small.cfg");
    std::ofstream(p) << pr::to_text(c);
    return p;
  }

  fs::path dir_;
};

bool one_line(const std::string& s) {
  return !s.empty() && s.back() == '\n' && s.find('\n') == s.size() - 1;
}

}  // namespace

TEST_F(Cli, GenerateDataWritesDatasetDirectory) {
  make_data();
  EXPECT_TRUE(fs::exists(at("data/annotations.json")));
  EXPECT_TRUE(fs::exists(at("data/images/000001.png")));
  EXPECT_TRUE(fs::exists(at("data/masks/000003.png")));
  const auto d = pr::coco_read(at("data/annotations.json"));
  EXPECT_EQ(d.images.size(), 3u);
}

TEST_F(Cli, EvaluateGroundTruthAgainstItself) {
  make_data();
  const std::string gt = at("data/annotations.json").string();
  ASSERT_EQ(run("evaluate --gt " + gt + " --results " + gt + " -o " + at("rep.json").string()).code, 0);
  const auto j = nlohmann::json::parse(pr::read_text(at("rep.json")));
  EXPECT_EQ(j["AP"].get<double>(), 1.0);
  EXPECT_EQ(j["AP50"].get<double>(), 1.0);
  EXPECT_EQ(j["AR"].get<double>(), 1.0);
  EXPECT_EQ(j["PoLiS"].get<double>(), 0.0);
  EXPECT_EQ(j["N_ratio"].get<double>(), 1.0);
  EXPECT_EQ(j["IoU"].get<double>(), 1.0);
  EXPECT_NE(out().find("AP50"), std::string::npos);
}

TEST_F(Cli, TrainZeroEpochsGivesInitialWeightsAndEmptyLog) {
  make_data();
  const fs::path cfg = small_config();
  ASSERT_EQ(run("train --data " + at("data").string() + " --config " + cfg.string() +
                " --epochs 0 -o " + at("m.ckpt").string())
                .code,
            0);
  EXPECT_EQ(pr::read_text(at("m.ckpt.loss.jsonl")), "");
  const auto ck = pr::load_checkpoint(at("m.ckpt"));
  const pr::Model fresh(ck.config.model);
  const auto a = ck.model.parameters(), b = fresh.parameters();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].var.value(), b[i].var.value());
}

TEST_F(Cli, TrainInferEvaluatePlotChain) {
  make_data();
  const fs::path cfg = small_config();
  ASSERT_EQ(run("train --data " + at("data").string() + " --config " + cfg.string() +
                " --epochs 2 -o " + at("m.ckpt").string())
                .code,
            0);
  // One JSON object per epoch, with per-stage losses.
  const std::string log = pr::read_text(at("m.ckpt.loss.jsonl"));
  EXPECT_EQ(std::count(log.begin(), log.end(), '\n'), 2);
  const auto first = nlohmann::json::parse(log.substr(0, log.find('\n')));
  EXPECT_EQ(first["epoch"].get<int>(), 0);
  EXPECT_EQ(first["stages"].size(), 6u);

  ASSERT_EQ(run("infer --checkpoint " + at("m.ckpt").string() + " --data " + at("data").string() +
                " --score-thresh 0.01 --vertex-thresh 0.01 -o " + at("res.json").string())
                .code,
            0);
  const auto res = nlohmann::json::parse(pr::read_text(at("res.json")));
  ASSERT_TRUE(res.is_array());
  for (const auto& d : res) {
    EXPECT_TRUE(d.contains("image_id"));
    EXPECT_TRUE(d.contains("category_id"));
    EXPECT_TRUE(d.contains("score"));
    ASSERT_TRUE(d["segmentation"].is_array());
    for (const auto& ring : d["segmentation"]) EXPECT_EQ(ring.size() % 2, 0u);
  }
  ASSERT_EQ(run("evaluate --gt " + at("data/annotations.json").string() + " --results " +
                at("res.json").string())
                .code,
            0);
  ASSERT_EQ(run("plot --data " + at("data").string() + " --results " + at("res.json").string() +
                " -o " + at("plots").string())
                .code,
            0);
  EXPECT_TRUE(fs::exists(at("plots/000001.png")));
}

TEST_F(Cli, ConvertMasksFromGeneratedData) {
  make_data();
  ASSERT_EQ(run("convert --masks " + at("data/masks").string() + " -o " + at("conv.json").string()).code,
            0);
  const auto d = pr::coco_read(at("conv.json"));
  EXPECT_EQ(d.images.size(), 3u);
  EXPECT_FALSE(d.annotations.empty());
}

TEST_F(Cli, RerunsAreByteIdentical) {
  make_data("a");
  make_data("b");
  EXPECT_EQ(pr::read_text(at("a/annotations.json")), pr::read_text(at("b/annotations.json")));
  EXPECT_EQ(pr::read_text(at("a/images/000002.png")), pr::read_text(at("b/images/000002.png")));
  const fs::path cfg = small_config();
  for (const char* name : {"m1", "m2"}) {
    ASSERT_EQ(run("train --data " + at("a").string() + " --config " + cfg.string() + " --epochs 2 -o " +
                  at(std::string(name) + ".ckpt").string())
                  .code,
              0);
    ASSERT_EQ(run("infer --checkpoint " + at(std::string(name) + ".ckpt").string() + " --data " +
                  at("a").string() + " --score-thresh 0.01 --vertex-thresh 0.01 -o " +
                  at(std::string(name) + ".json").string())
                  .code,
              0);
    ASSERT_EQ(run("evaluate --gt " + at("a/annotations.json").string() + " --results " +
                  at(std::string(name) + ".json").string() + " -o " +
                  at(std::string(name) + ".rep.json").string())
                  .code,
              0);
  }
  EXPECT_EQ(pr::read_text(at("m1.ckpt")), pr::read_text(at("m2.ckpt")));
  EXPECT_EQ(pr::read_text(at("m1.ckpt.loss.jsonl")), pr::read_text(at("m2.ckpt.loss.jsonl")));
  EXPECT_EQ(pr::read_text(at("m1.json")), pr::read_text(at("m2.json")));
  EXPECT_EQ(pr::read_text(at("m1.rep.json")), pr::read_text(at("m2.rep.json")));
}

TEST_F(Cli, FailuresExitNonzeroWithOneLineAndNoPartialOutput) {
  // Unreadable input.
  CliRun r = run("evaluate --gt " + at("missing.json").string() + " --results x -o " +
              at("rep.json").string());
  EXPECT_EQ(r.code, 1);
  EXPECT_TRUE(one_line(r.err)) << r.err;
  EXPECT_FALSE(fs::exists(at("rep.json")));

  // Malformed input caught after outputs would be due.
  make_data();
  std::ofstream(at("bad.json")) << "[{\"image_id\": 1}]";
  r = run("evaluate --gt " + at("data/annotations.json").string() + " --results " +
          at("bad.json").string() + " -o " + at("rep.json").string());
  EXPECT_EQ(r.code, 1);
  EXPECT_TRUE(one_line(r.err)) << r.err;
  EXPECT_FALSE(fs::exists(at("rep.json")));

  // Capacity error during training: M too small for the data.
  r = run("train --data " + at("data").string() + " --config " + small_config().string() +
          " --m-vertices 3 --epochs 1 -o " + at("m.ckpt").string());
  EXPECT_EQ(r.code, 1);
  EXPECT_TRUE(one_line(r.err)) << r.err;
  EXPECT_FALSE(fs::exists(at("m.ckpt")));
  EXPECT_FALSE(fs::exists(at("m.ckpt.loss.jsonl")));

  // Bad generator config leaves no directory behind.
  r = run("generate-data --image-size 100 -o " + at("g").string());
  EXPECT_EQ(r.code, 1);
  EXPECT_TRUE(one_line(r.err)) << r.err;
  EXPECT_FALSE(fs::exists(at("g")));

  // Usage errors.
  EXPECT_NE(run("").code, 0);
  EXPECT_NE(run("no-such-command").code, 0);
  EXPECT_NE(run("infer --data x").code, 0);
}
