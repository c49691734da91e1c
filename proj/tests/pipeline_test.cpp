// Copyright 2026 The AMULET-Desk Authors
// SPDX-License-Identifier: Apache-2.0

#include <filesystem>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "amulet/amulet.hpp"

using namespace amulet;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::vector<std::string> errors_of(const json& j) {
  std::vector<std::string> e;
  config::resolve(j, e);
  return e;
}

bool any_contains(const std::vector<std::string>& v, const std::string& needle) {
  for (const auto& s : v)
    if (s.find(needle) != std::string::npos) return true;
  return false;
}

json tiny_config() {
  return json{{"synth", {{"n_train", 6}, {"n_dev", 4}, {"n_eval", 5}, {"clip_seconds", 1.0}}},
              {"encoder", {{"hidden", {8, 8}}}},
              {"shared_train", {{"max_epochs", 1}, {"batch_size", 4}}},
              {"ase_train", {{"max_epochs", 1}, {"batch_size", 4}}},
              {"fusion_train", {{"max_epochs", 1}, {"batch_size", 4}}},
              {"mixed", {"noise_first", "rawboost8"}}};
}

struct CapturedLog {
  std::vector<std::string> lines;
  pipeline::Logger fn() {
    return [this](const std::string& l) { lines.push_back(l); };
  }
  std::size_t count_prefix(const std::string& p) const {
    std::size_t n = 0;
    for (const auto& l : lines) n += l.rfind(p, 0) == 0;
    return n;
  }
};

fs::path fresh_dir(const std::string& name) {
  const auto d = fs::temp_directory_path() / ("amulet_pipeline_test_" + name);
  fs::remove_all(d);
  return d;
}

}  // namespace

// ------------------------------------------------------------------ config

TEST(Config, EmptyObjectResolvesToDefaults) {
  std::vector<std::string> e;
  const auto c = config::resolve(json::object(), e);
  EXPECT_TRUE(e.empty());
  const auto j = config::to_json(c);
  EXPECT_EQ(j["synth"]["n_train"], 400);
  EXPECT_EQ(j["lora"]["rank"], 4);
  EXPECT_EQ(j["k_list"], json({3, 4, 5}));
  EXPECT_EQ(j["roster"].size(), 5u);
  EXPECT_EQ(j["seeds"]["fusion"], 6);
  // Echoing the resolved config resolves to itself.
  std::vector<std::string> e2;
  EXPECT_EQ(config::to_json(config::resolve(j, e2)), j);
  EXPECT_TRUE(e2.empty());
}

TEST(Config, ShippedDefaultMatchesBuiltInDefaults) {
  const auto shipped = config::load(std::string(AMULET_SOURCE_DIR) + "/configs/default.json");
  std::vector<std::string> e;
  EXPECT_EQ(config::to_json(shipped), config::to_json(config::resolve(json::object(), e)));
}

TEST(Config, KExceedsExpertCount) {
  EXPECT_TRUE(any_contains(errors_of({{"k_list", {3, 6}}}), "k exceeds expert count"));
  EXPECT_TRUE(any_contains(errors_of({{"k_list", {0}}}), "k must be >= 1"));
}

TEST(Config, RosterReferencingUnbuiltCondition) {
  const auto e = errors_of({{"conditions", {"T1", "T2"}}});
  EXPECT_TRUE(any_contains(e, "roster references unbuilt condition variant(s): T3 T4 T5"));
  EXPECT_TRUE(any_contains(e, "subset_sources reference unbuilt condition variant(s): T3 T4 T5"));
}

TEST(Config, EveryProblemIsReported) {
  const json j = {{"bogus", 1},          {"conditions", {"T1", "T2", "T3", "T4", "T5", "T9"}},
                  {"jobs", 0},           {"subset_fraction", 1.5},
                  {"primary_k", 2},      {"lora", {{"rank", 0}}},
                  {"synth", {{"n_dev", 0}}}};
  const auto e = errors_of(j);
  EXPECT_TRUE(any_contains(e, "unknown key 'bogus'"));
  EXPECT_TRUE(any_contains(e, "unknown attack preset 'T9'"));
  EXPECT_TRUE(any_contains(e, "jobs must be >= 1"));
  EXPECT_TRUE(any_contains(e, "subset_fraction"));
  EXPECT_TRUE(any_contains(e, "primary_k"));
  EXPECT_TRUE(any_contains(e, "config.lora"));
  EXPECT_TRUE(any_contains(e, "config.synth"));
  EXPECT_GE(e.size(), 7u);
  try {
    config::resolve_or_throw(j);
    FAIL();
  } catch (const InputError& ex) {
    EXPECT_NE(std::string(ex.what()).find(std::to_string(e.size()) + " problems"), std::string::npos);
  }
}

TEST(Config, RosterNamesAndT0) {
  EXPECT_TRUE(any_contains(errors_of({{"roster", {{{"expert", "E0"}, {"condition", "T1"}}}}, {"k_list", {1}}, {"primary_k", 1}}),
                           "reserved or duplicated"));
  EXPECT_TRUE(any_contains(errors_of({{"conditions", {"T0", "T1", "T2", "T3", "T4", "T5"}}}), "T0 is the clean corpus"));
  EXPECT_TRUE(any_contains(errors_of({{"roster", json::array()}}), "at least one attack-specific expert"));
}

TEST(Config, SeedOverrideReplacesEveryStageSeed) {
  auto a = config::resolve_or_throw(json::object());
  auto b = a;
  config::override_seeds(a, 2);
  config::override_seeds(b, 2);
  EXPECT_EQ(config::to_json(a), config::to_json(b));
  const auto def = config::resolve_or_throw(json::object());
  EXPECT_NE(a.seeds.synth, def.seeds.synth);
  EXPECT_NE(a.seeds.fusion, def.seeds.fusion);
  EXPECT_NE(a.seeds.synth, a.seeds.attack);
}

TEST(Config, FileErrors) {
  EXPECT_THROW(config::read_json_file("/nonexistent/cfg.json"), IoError);
  const auto d = fresh_dir("badjson");
  fs::create_directories(d);
  pipeline::write_text(d / "bad.json", "{ not json");
  EXPECT_THROW(config::read_json_file((d / "bad.json").string()), InputError);
}

// ------------------------------------------------------------------ pipeline

TEST(Pipeline, MissingUpstreamArtifactsNameTheStage) {
  const auto cfg = config::resolve_or_throw(tiny_config());
  pipeline::Pipeline p(cfg, fresh_dir("missing"), {});
  auto message = [](auto&& fn) {
    try {
      fn();
    } catch (const MissingArtifactError& e) {
      return std::string(e.what());
    }
    return std::string("no error");
  };
  EXPECT_NE(message([&] { p.run_attack(); }).find("run the synth stage first"), std::string::npos);
  EXPECT_NE(message([&] { p.run_train_ase(); }).find("run the train-shared stage first"), std::string::npos);
  EXPECT_NE(message([&] { p.run_evaluate(); }).find("run the train-shared stage first"), std::string::npos);
  EXPECT_NE(message([&] { p.run_report(); }).find("run the evaluate stage first"), std::string::npos);
}

TEST(Pipeline, UnknownConditionListsValidOnes) {
  const auto cfg = config::resolve_or_throw(tiny_config());
  pipeline::Pipeline p(cfg, fresh_dir("unknown"), {});
  try {
    p.run_train_ase("T9");
    FAIL();
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find("valid conditions: T1, T2, T3, T4, T5"), std::string::npos);
  }
  EXPECT_THROW(p.run_attack("T9"), InputError);
  EXPECT_THROW(p.run_train_fusion(std::size_t{6}), InputError);
}

// Two fresh runs of the tiny config: identical artifacts, and a rerun in
// place skips every stage.
TEST(Pipeline, TinyReproduceIsIdempotentAndReproducible) {
  const auto cfg = config::resolve_or_throw(tiny_config());
  const auto d1 = fresh_dir("run1"), d2 = fresh_dir("run2");
  CapturedLog log1;
  pipeline::Pipeline p1(cfg, d1, log1.fn());
  p1.reproduce();
  const auto stages = log1.count_prefix("run ");
  EXPECT_EQ(log1.count_prefix("skip "), 0u);
  // synth, 8 attack variants, shared, 5 ASEs, 3 fusions, evaluate, report
  EXPECT_EQ(stages, 1u + 8u + 1u + 5u + 3u + 1u + 1u);
  EXPECT_GT(log1.count_prefix("{\"best\""), 0u);

  for (const char* f : {"reports/table1.csv", "reports/table2.csv", "reports/table4.csv", "checksums.txt",
                        "models/E0.ckpt", "models/E5.ckpt", "models/fusion_k5.ckpt", "scores/T4.csv"}) {
    EXPECT_TRUE(fs::exists(d1 / f)) << f;
  }
  const auto t1 = eval::parse_csv(pipeline::read_text(d1 / "reports/table1.csv"));
  EXPECT_EQ(t1.size(), (1u + 5u + 1u + 3u) * 7u);

  CapturedLog again;
  pipeline::Pipeline p1b(cfg, d1, again.fn());
  p1b.reproduce();
  EXPECT_EQ(again.count_prefix("run "), 0u);
  EXPECT_EQ(again.count_prefix("skip "), stages);

  pipeline::Pipeline p2(cfg, d2, {});
  p2.reproduce();
  EXPECT_EQ(pipeline::read_text(d1 / "checksums.txt"), pipeline::read_text(d2 / "checksums.txt"));

  // A tampered output forces exactly that stage to rerun.
  pipeline::write_text(d1 / "reports/table1.txt", "edited\n");
  CapturedLog third;
  pipeline::Pipeline p1c(cfg, d1, third.fn());
  p1c.run_report();
  EXPECT_EQ(third.count_prefix("run report"), 1u);
  EXPECT_EQ(pipeline::read_text(d1 / "reports/table1.txt"), pipeline::read_text(d2 / "reports/table1.txt"));
}
