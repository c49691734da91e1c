// Copyright 2026 The AMULET-Desk Authors
// SPDX-License-Identifier: Apache-2.0

#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include <gtest/gtest.h>

namespace fs = std::filesystem;

namespace {

struct Result {
  int code = -1;
  std::string output;  // stdout and stderr
};

Result run(const std::string& args, const std::string& env = "") {
  const std::string cmd = env + " " + std::string(AMULET_CLI_PATH) + " " + args + " 2>&1";
  Result r;
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) return r;
  std::array<char, 4096> buf;
  std::size_t n;
  while ((n = fread(buf.data(), 1, buf.size(), p)) > 0) r.output.append(buf.data(), n);
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

fs::path scratch(const std::string& name) {
  const auto d = fs::temp_directory_path() / ("amulet_cli_test_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

fs::path write_config(const fs::path& dir, const std::string& text) {
  const auto p = dir / "cfg.json";
  std::ofstream(p) << text;
  return p;
}

const char* kTiny = R"({
  "synth": { "n_train": 4, "n_dev": 4, "n_eval": 4, "clip_seconds": 1.0 },
  "encoder": { "hidden": [8, 8] },
  "shared_train": { "max_epochs": 1 },
  "ase_train": { "max_epochs": 1 },
  "fusion_train": { "max_epochs": 1 },
  "mixed": ["rawboost8"]
})";

}  // namespace

TEST(Cli, HelpAndUsage) {
  EXPECT_EQ(run("--help").code, 0);
  const auto none = run("");
  EXPECT_EQ(none.code, 1);
  EXPECT_EQ(run("frobnicate").code, 1);
  EXPECT_EQ(run("synth --jobs 0").code, 1);
}

TEST(Cli, ValidateConfigEchoesDefaults) {
  const auto r = run("validate-config --config default");
  EXPECT_EQ(r.code, 0) << r.output;
  EXPECT_NE(r.output.find("\"n_train\": 400"), std::string::npos);
  EXPECT_NE(r.output.find("\"scale_mode\": \"alpha_over_r\""), std::string::npos);
  const auto d = scratch("minimal");
  const auto m = run("validate-config --config " + write_config(d, "{}").string());
  EXPECT_EQ(m.code, 0);
  EXPECT_EQ(m.output, r.output);
}

TEST(Cli, ValidateConfigReportsEveryProblem) {
  const auto d = scratch("invalid");
  const auto r = run("validate-config --config " +
                     write_config(d, R"({"k_list": [3, 7], "conditions": ["T1", "T2"], "jobs": 0})").string());
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.output.find("k exceeds expert count"), std::string::npos);
  EXPECT_NE(r.output.find("roster references unbuilt condition variant(s): T3 T4 T5"), std::string::npos);
  EXPECT_NE(r.output.find("jobs must be >= 1"), std::string::npos);
}

TEST(Cli, MissingConfigAndUpstreamArtifacts) {
  EXPECT_EQ(run("synth --config /nonexistent/x.json").code, 1);
  const auto d = scratch("upstream");
  const auto cfg = write_config(d, kTiny).string();
  const auto r = run("train-shared --config " + cfg + " --out " + (d / "out").string());
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.output.find("run the synth stage first"), std::string::npos);
}

TEST(Cli, UnknownConditionNamesValidOnes) {
  const auto d = scratch("cond");
  const auto r =
      run("train-ase --condition T9 --config " + write_config(d, kTiny).string() + " --out " + (d / "out").string());
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.output.find("valid conditions: T1, T2, T3, T4, T5"), std::string::npos);
}

TEST(Cli, StagesAreIdempotentAndOutputRootFollowsEnv) {
  const auto d = scratch("stages");
  const auto cfg = write_config(d, kTiny).string();
  const auto first = run("synth --config " + cfg, "AMULET_OUT=" + (d / "env").string());
  EXPECT_EQ(first.code, 0) << first.output;
  EXPECT_TRUE(fs::exists(d / "env" / "corpus" / "T0" / "manifest.jsonl"));
  const auto second = run("synth --config " + cfg, "AMULET_OUT=" + (d / "env").string());
  EXPECT_EQ(second.code, 0);
  EXPECT_NE(second.output.find("skip synth: outputs up to date"), std::string::npos);
  // --out wins over the environment.
  EXPECT_EQ(run("synth --config " + cfg + " --out " + (d / "flag").string(), "AMULET_OUT=" + (d / "env2").string()).code,
            0);
  EXPECT_TRUE(fs::exists(d / "flag" / "corpus" / "T0" / "manifest.jsonl"));
  EXPECT_FALSE(fs::exists(d / "env2"));
}

TEST(Cli, ReproduceWritesReports) {
  const auto d = scratch("reproduce");
  const auto r = run("reproduce --jobs 2 --config " + write_config(d, kTiny).string() + " --out " + (d / "out").string());
  EXPECT_EQ(r.code, 0) << r.output;
  for (const char* f : {"reports/table1.csv", "reports/table2.csv", "reports/table4.csv", "checksums.txt"}) {
    EXPECT_TRUE(fs::exists(d / "out" / f)) << f;
  }
  EXPECT_NE(r.output.find("E0+top-5"), std::string::npos);
  EXPECT_NE(r.output.find("1.13%"), std::string::npos);
}

TEST(Cli, CorruptedCheckpointIsAUserError) {
  const auto d = scratch("tamper");
  const auto cfg = write_config(d, kTiny).string();
  const auto out = (d / "out").string();
  ASSERT_EQ(run("reproduce --config " + cfg + " --out " + out).code, 0);
  // One flipped byte in E0; loading it must fail as a user error.
  fs::remove_all(d / "out" / "stamps" / "train-shared.json");
  fs::remove_all(d / "out" / "stamps" / "evaluate.json");
  const auto e0 = d / "out" / "models" / "E0.ckpt";
  std::string bytes;
  {
    std::ifstream in(e0, std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(in), {});
  }
  bytes[bytes.size() - 9] ^= 0x01;
  std::ofstream(e0, std::ios::binary) << bytes;
  const auto r = run("evaluate --config " + cfg + " --out " + out);
  EXPECT_EQ(r.code, 1) << r.output;
  EXPECT_NE(r.output.find("error: "), std::string::npos);
}
