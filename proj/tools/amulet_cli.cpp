// Copyright 2026 The AMULET-Desk Authors
// SPDX-License-Identifier: Apache-2.0
//
// amulet: runs the experiment stages from one config file.
// Exit codes: 0 success, 1 user or config error, 2 internal error.
// Scores are logit(bonafide) - logit(spoof); higher means more bona fide.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "amulet/amulet.hpp"

namespace fs = std::filesystem;
using namespace amulet;

#ifndef AMULET_SOURCE_DIR
#define AMULET_SOURCE_DIR "."
#endif

namespace {

// "default" -> configs/default.json, looked up next to the working directory
// and then in the source tree.
std::string resolve_config_path(const std::string& arg) {
  if (fs::exists(arg)) return arg;
  if (arg.find('/') == std::string::npos && arg.find('.') == std::string::npos) {
    for (const fs::path& base : {fs::path("configs"), fs::path(AMULET_SOURCE_DIR) / "configs"}) {
      const fs::path p = base / (arg + ".json");
      if (fs::exists(p)) return p.string();
    }
  }
  throw IoError("config file not found: " + arg);
}

struct Options {
  std::string config = "default";
  std::string out;
  int jobs = 0;
  std::optional<std::uint64_t> seed_override;
  std::string condition;
  std::size_t k = 0;
};

config::ExperimentConfig load_config(const Options& o) {
  auto cfg = config::load(resolve_config_path(o.config));
  if (o.seed_override) config::override_seeds(cfg, *o.seed_override);
  if (o.jobs > 0) cfg.jobs = o.jobs;
  if (const char* env = std::getenv("AMULET_OUT"); env && *env) cfg.out = env;
  if (!o.out.empty()) cfg.out = o.out;
  return cfg;
}

int run(int argc, char** argv) {
  CLI::App app{"Attack-specific LoRA experts with gated fusion for spoofing detection (desk scale)"};
  app.require_subcommand(1);
  Options o;
  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "config file, or a name under configs/")->capture_default_str();
    sub->add_option("--out", o.out, "output root (overrides AMULET_OUT and the config)");
    sub->add_option("--jobs", o.jobs, "worker threads")->check(CLI::PositiveNumber);
    sub->add_option("--seed-override", o.seed_override, "derive every stage seed from this value");
  };
  auto* synth = app.add_subcommand("synth", "synthesize the clean corpus (T0)");
  auto* attack = app.add_subcommand("attack", "build attacked corpus variants");
  auto* shared = app.add_subcommand("train-shared", "fully train the shared expert E0");
  auto* ase = app.add_subcommand("train-ase", "train LoRA attack-specific experts");
  auto* fus = app.add_subcommand("train-fusion", "train the gated fusion for each k");
  auto* evaluate = app.add_subcommand("evaluate", "score every system on every eval condition");
  auto* report = app.add_subcommand("report", "write the EER and parameter tables");
  auto* repro = app.add_subcommand("reproduce", "run every stage, then write checksums.txt");
  auto* validate = app.add_subcommand("validate-config", "print the resolved config or every problem found");
  for (auto* s : {synth, attack, shared, ase, fus, evaluate, report, repro, validate}) common(s);
  attack->add_option("--condition", o.condition, "build only this condition");
  ase->add_option("--condition", o.condition, "train only the expert for this condition");
  fus->add_option("--k", o.k, "train only this k")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  if (validate->parsed()) {
    const auto j = config::read_json_file(resolve_config_path(o.config));
    std::vector<std::string> errors;
    auto cfg = config::resolve(j, errors);
    if (!errors.empty()) {
      for (const auto& e : errors) std::cerr << "error: " << e << "\n";
      return 1;
    }
    if (o.seed_override) config::override_seeds(cfg, *o.seed_override);
    std::cout << config::to_json(cfg).dump(2) << "\n";
    return 0;
  }

  const auto cfg = load_config(o);
  pipeline::Pipeline p(cfg, cfg.out);
  const std::optional<std::string> cond = o.condition.empty() ? std::nullopt : std::optional(o.condition);
  if (synth->parsed()) p.run_synth();
  else if (attack->parsed()) p.run_attack(cond);
  else if (shared->parsed()) p.run_train_shared();
  else if (ase->parsed()) p.run_train_ase(cond);
  else if (fus->parsed()) p.run_train_fusion(o.k ? std::optional(o.k) : std::nullopt);
  else if (evaluate->parsed()) p.run_evaluate();
  else if (report->parsed()) {
    p.run_report();
    std::cout << pipeline::read_text(p.report_path("table1.txt")) << "\n"
              << pipeline::read_text(p.report_path("table2.txt")) << "\n"
              << pipeline::read_text(p.report_path("table4.txt"));
  } else if (repro->parsed()) {
    p.reproduce();
    std::cout << pipeline::read_text(p.report_path("table1.txt")) << "\n"
              << pipeline::read_text(p.report_path("table2.txt")) << "\n"
              << pipeline::read_text(p.report_path("table4.txt"));
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 2;
  }
}
