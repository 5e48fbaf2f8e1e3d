// Copyright (c) 2026, The rlrs-lab Authors
// SPDX-License-Identifier: Apache-2.0

// Drives the rlrs executable as a subprocess.

#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#ifndef RLRS_CLI_PATH
#error "RLRS_CLI_PATH must point at the rlrs executable"
#endif

namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out;  // stdout and stderr
};

Result run(const std::string& args) {
  const std::string cmd = std::string(RLRS_CLI_PATH) + " " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return {-1, ""};
  std::string out;
  char buf[4096];
  for (std::size_t n; (n = fread(buf, 1, sizeof buf, pipe)) > 0;) out.append(buf, n);
  const int status = pclose(pipe);
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, out};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

constexpr const char* kTinyMoe = R"(model.d_model = 16
model.n_layers = 1
model.n_heads = 2
model.n_experts = 4
model.vocab_size = 32
model.seq_len = 8
data.synthetic.vocab_size = 32
data.synthetic.length = 5000
schedule.eta_base = 3e-3
schedule.total_steps = 40
train.batch_size = 2
)";

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("rlrs_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string write(const std::string& name, const std::string& text) {
    std::ofstream(dir_ / name) << text;
    return (dir_ / name).string();
  }
  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  fs::path dir_;
};

}  // namespace

TEST_F(Cli, PresetsPrintTables) {
  const auto moe = run("presets --kind moe");
  EXPECT_EQ(moe.code, 0);
  EXPECT_NE(moe.out.find("rlrs.experts.start = 0.3\n"), std::string::npos);
  EXPECT_NE(moe.out.find("rlrs.experts.end = 1.125\n"), std::string::npos);
  EXPECT_NE(moe.out.find("schedule.alpha_end = 0.04"), std::string::npos);
  const auto dense = run("presets --kind dense");
  EXPECT_EQ(dense.code, 0);
  EXPECT_NE(dense.out.find("rlrs.feedforward.end = 0.6\n"), std::string::npos);
  EXPECT_EQ(dense.out.find("rlrs.router"), std::string::npos);
  EXPECT_EQ(run("presets --kind sparse").code, 1);
}

TEST_F(Cli, TrainWritesDocumentedFiles) {
  const auto cfg = write("a.cfg", kTinyMoe);
  const auto r = run("train --config " + cfg + " --out " + path("out") + " --seed 4 --data-seed 9");
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_TRUE(fs::exists(dir_ / "out" / "run.curve.csv"));
  EXPECT_TRUE(fs::exists(dir_ / "out" / "run.meta.json"));
  EXPECT_FALSE(fs::exists(dir_ / "out" / "run.timing.csv"));
  const auto meta = nlohmann::json::parse(slurp(dir_ / "out" / "run.meta.json"));
  EXPECT_EQ(meta["seeds"]["init"], 4);
  EXPECT_EQ(meta["seeds"]["data"], 9);
  const auto csv = slurp(dir_ / "out" / "run.curve.csv");
  EXPECT_TRUE(csv.starts_with("percent,step,loss,lr_embedding,lr_attention,lr_router,lr_experts,lr_unembedding,"));
}

TEST_F(Cli, SeedsDefaultToConfigAndTimingIsOptional) {
  const auto cfg = write("a.cfg", std::string(kTinyMoe) + "train.init_seed = 21\ntrain.data_seed = 22\n");
  ASSERT_EQ(run("train --timing --config " + cfg + " --out " + path("out")).code, 0);
  const auto meta = nlohmann::json::parse(slurp(dir_ / "out" / "run.meta.json"));
  EXPECT_EQ(meta["seeds"]["init"], 21);
  EXPECT_EQ(meta["seeds"]["data"], 22);
  EXPECT_TRUE(fs::exists(dir_ / "out" / "run.timing.csv"));
}

TEST_F(Cli, TrainIsByteStable) {
  const auto cfg = write("a.cfg", kTinyMoe);
  ASSERT_EQ(run("train --config " + cfg + " --out " + path("x")).code, 0);
  ASSERT_EQ(run("train --config " + cfg + " --out " + path("y")).code, 0);
  EXPECT_EQ(slurp(dir_ / "x" / "run.curve.csv"), slurp(dir_ / "y" / "run.curve.csv"));
  EXPECT_EQ(slurp(dir_ / "x" / "run.meta.json"), slurp(dir_ / "y" / "run.meta.json"));
}

TEST_F(Cli, ExitCodes) {
  const auto no_lr = write("no_lr.cfg", "model.d_model = 16\n");
  const auto r1 = run("train --config " + no_lr + " --out " + path("o"));
  EXPECT_EQ(r1.code, 1);
  EXPECT_NE(r1.out.find("schedule.eta_base"), std::string::npos);

  const auto hot = write("hot.cfg", std::string(kTinyMoe) + "rlrs.attention.start = 1e300\n");
  const auto r2 = run("train --config " + hot + " --out " + path("d"));
  EXPECT_EQ(r2.code, 2) << r2.out;
  EXPECT_TRUE(fs::exists(dir_ / "d" / "run.curve.csv"));
  const auto meta = nlohmann::json::parse(slurp(dir_ / "d" / "run.meta.json"));
  EXPECT_TRUE(meta["diverged"].get<bool>());
  EXPECT_NE(meta["diagnostic"].get<std::string>().find("step "), std::string::npos);

  EXPECT_EQ(run("train --config " + path("missing.cfg") + " --out " + path("o")).code, 3);
  const auto cfg = write("a.cfg", kTinyMoe);
  write("blocker", "x");
  EXPECT_EQ(run("train --config " + cfg + " --out " + path("blocker") + "/sub").code, 3);
}

TEST_F(Cli, UnknownFlagsAndSubcommandsAreRejected) {
  EXPECT_EQ(run("train --config a --out b --bogus").code, 1);
  EXPECT_EQ(run("frobnicate").code, 1);
  EXPECT_EQ(run("").code, 1);
  EXPECT_EQ(run("presets --kind moe train --config a --out b").code, 1);
}

TEST_F(Cli, HelpListsEveryFlag) {
  const std::vector<std::pair<std::string, std::vector<std::string>>> cases{
      {"train", {"--config", "--out", "--seed", "--data-seed", "--timing"}},
      {"tune", {"--config", "--mode", "--budget", "--out", "--seeds", "--resume", "--jobs"}},
      {"compare", {"--base", "--rlrs", "--seeds", "--out", "--jobs"}},
      {"extrapolate", {"--small-result", "--large-config", "--grid", "--seeds", "--out", "--jobs"}},
      {"ablate", {"--config", "--component", "--which", "--values", "--seeds", "--out", "--jobs"}},
      {"presets", {"--kind"}}};
  for (const auto& [cmd, flags] : cases) {
    const auto r = run(cmd + " --help");
    EXPECT_EQ(r.code, 0) << cmd;
    for (const auto& f : flags) EXPECT_NE(r.out.find(f), std::string::npos) << cmd << " " << f;
  }
  const auto top = run("--help");
  for (const char* cmd : {"train", "tune", "compare", "extrapolate", "ablate", "presets"})
    EXPECT_NE(top.out.find(cmd), std::string::npos);
}

TEST_F(Cli, AblateWithOneValueAndSeedMakesOneRun) {
  const auto cfg = write("a.cfg", kTinyMoe);
  const auto r = run("ablate --config " + cfg + " --component experts --which end --values 0.5 --seeds 3 --out " +
                     path("abl"));
  ASSERT_EQ(r.code, 0) << r.out;
  std::size_t curves = 0;
  for (const auto& e : fs::directory_iterator(dir_ / "abl" / "runs"))
    if (e.path().string().ends_with(".curve.csv")) ++curves;
  EXPECT_EQ(curves, 1u);
  EXPECT_TRUE(fs::exists(dir_ / "abl" / "runs" / "ablate.experts.end.0.5.seed3.curve.csv"));
  const auto j = nlohmann::json::parse(slurp(dir_ / "abl" / "ablation.json"));
  ASSERT_EQ(j["values"].size(), 1u);
  EXPECT_EQ(j["values"][0]["final_losses"].size(), 1u);
  EXPECT_EQ(run("ablate --config " + cfg + " --component feedforward --values 1 --out " + path("x")).code, 1);
}

TEST_F(Cli, CompareIdenticalConfigsGivesZero) {
  const auto cfg = write("a.cfg", kTinyMoe);
  const auto r = run("compare --base " + cfg + " --rlrs " + cfg + " --seeds 0,1 --jobs 2 --out " + path("cmp"));
  ASSERT_EQ(r.code, 0) << r.out;
  const auto j = nlohmann::json::parse(slurp(dir_ / "cmp" / "report.json"));
  EXPECT_EQ(j["speedup"]["percent"], 0.0);
  EXPECT_EQ(j["rows"][1]["speedup"], 0.0);
  EXPECT_EQ(j["rows"][0]["runs"].size(), 2u);
  EXPECT_TRUE(fs::exists(dir_ / "cmp" / "runs" / "rlrs.seed1.curve.csv"));
  const auto again = run("compare --base " + cfg + " --rlrs " + cfg + " --seeds 0,1 --out " + path("cmp2"));
  ASSERT_EQ(again.code, 0);
  EXPECT_EQ(slurp(dir_ / "cmp" / "report.json"), slurp(dir_ / "cmp2" / "report.json"));
}

TEST_F(Cli, TuneWritesBestConfigAndAuditTrail) {
  const auto cfg = write("a.cfg", kTinyMoe);
  const auto r = run("tune --config " + cfg + " --mode rlrs --budget 4 --out " + path("t"));
  ASSERT_EQ(r.code, 0) << r.out;
  const auto trail = slurp(dir_ / "t" / "audit.jsonl");
  EXPECT_EQ(std::count(trail.begin(), trail.end(), '\n'), 4);
  const auto best = slurp(dir_ / "t" / "best.cfg");
  EXPECT_NE(best.find("provenance.tuned_by = local_search"), std::string::npos);
  const auto summary = nlohmann::json::parse(slurp(dir_ / "t" / "tune.json"));
  EXPECT_EQ(summary["evaluations"], 4);
  EXPECT_TRUE(summary["budget_exhausted"].get<bool>());
  // The best config is itself a valid training config.
  EXPECT_EQ(run("train --config " + path("t/best.cfg") + " --out " + path("tb")).code, 0);
  // Cached trials are free, so 4 + 4 resumed evaluations follow the path of 8 fresh ones.
  const auto resumed = run("tune --config " + cfg + " --budget 4 --resume " + path("t/audit.jsonl") + " --out " + path("t2"));
  ASSERT_EQ(resumed.code, 0) << resumed.out;
  ASSERT_EQ(run("tune --config " + cfg + " --budget 8 --out " + path("t8")).code, 0);
  EXPECT_EQ(slurp(dir_ / "t8" / "best.cfg"), slurp(dir_ / "t2" / "best.cfg"));
  EXPECT_EQ(nlohmann::json::parse(slurp(dir_ / "t2" / "tune.json"))["evaluations"], 4);
  const auto baseline = run("tune --config " + cfg + " --mode baseline --budget 2 --out " + path("tb2"));
  EXPECT_EQ(baseline.code, 0) << baseline.out;
}

TEST_F(Cli, ExtrapolateTransfersAndTunesBothArms) {
  const auto small = write("small.cfg", std::string(kTinyMoe) + "rlrs.experts.start = 0.3\nrlrs.experts.end = 1.125\n");
  std::string large_text = kTinyMoe;
  large_text.replace(large_text.find("model.d_model = 16"), 18, "model.d_model = 24");
  const auto large = write("large.cfg", large_text);
  const auto r = run("extrapolate --small-result " + small + " --large-config " + large +
                     " --grid 2..3 --seeds 0 --jobs 2 --out " + path("ex"));
  ASSERT_EQ(r.code, 0) << r.out;
  const auto transferred = slurp(dir_ / "ex" / "transferred.cfg");
  EXPECT_NE(transferred.find("rlrs.experts.start = 0.3\n"), std::string::npos);
  EXPECT_NE(transferred.find("model.d_model = 24\n"), std::string::npos);
  EXPECT_NE(transferred.find("provenance.source_run"), std::string::npos);
  const auto lr = nlohmann::json::parse(slurp(dir_ / "ex" / "lr_tuning.json"));
  EXPECT_EQ(lr["relative"]["trials"].size(), 6u);
  EXPECT_EQ(lr["baseline"]["trials"].size(), 6u);
  const auto report = nlohmann::json::parse(slurp(dir_ / "ex" / "report.json"));
  EXPECT_EQ(report["rows"].size(), 2u);
  EXPECT_TRUE(report.contains("speedup_detail"));

  auto dense_text = std::string(kTinyMoe);
  dense_text.replace(dense_text.find("model.n_experts = 4"), 19, "model.n_experts = 0");
  const auto dense = write("dense.cfg", dense_text);
  EXPECT_EQ(run("extrapolate --small-result " + dense + " --large-config " + large + " --grid 3 --seeds 0 --out " +
                path("bad")).code,
            1);
}
