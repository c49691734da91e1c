// Copyright 2026 The AMULET-Desk Authors
// SPDX-License-Identifier: Apache-2.0
//
// Experiment configuration: one JSON file with every knob and a seed per
// stochastic stage. Missing keys take the defaults below; validation
// reports every problem at once.

#pragma once

#include <fstream>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "amulet/attacks.hpp"
#include "amulet/dataset.hpp"
#include "amulet/errors.hpp"
#include "amulet/experts.hpp"
#include "amulet/fusion.hpp"
#include "amulet/hashing.hpp"
#include "amulet/presets.hpp"
#include "amulet/training.hpp"

namespace amulet::config {

using nlohmann::json;

struct Seeds {
  std::uint64_t synth = 1;
  std::uint64_t attack = 2;
  std::uint64_t shared = 3;
  std::uint64_t ase = 4;
  std::uint64_t subset = 5;
  std::uint64_t fusion = 6;
};

struct RosterEntry {
  std::string expert;     // "E1"
  std::string condition;  // "T1"
};

// Desk-scale schedule: 20 epochs of 16-clip batches at the given rate.
inline training::TrainHyper desk_hyper(double lr) {
  training::TrainHyper h;
  h.lr = lr;
  h.max_epochs = 20;
  h.batch_size = 16;
  return h;
}

struct ExperimentConfig {
  dataset::SynthConfig synth;
  experts::EncoderConfig encoder;
  experts::InitConfig init;
  experts::LoraHyper lora;
  training::TrainHyper shared_train = desk_hyper(0.5);
  training::TrainHyper ase_train = desk_hyper(0.2);
  training::TrainHyper fusion_train = desk_hyper(0.1);
  fusion::FusionConfig fusion;
  std::vector<std::size_t> k_list{3, 4, 5};
  std::size_t primary_k = 5;
  std::vector<std::string> conditions{"T1", "T2", "T3", "T4", "T5", "T6"};
  std::vector<RosterEntry> roster{{"E1", "T1"}, {"E2", "T2"}, {"E3", "T3"}, {"E4", "T4"}, {"E5", "T5"}};
  std::vector<std::string> mixed{"noise_first", "filter_first", "rawboost4", "rawboost5",
                                 "rawboost6",   "rawboost7",    "rawboost8"};
  std::vector<std::string> subset_sources{"T0", "T1", "T2", "T3", "T4", "T5"};
  double subset_fraction = 0.25;
  std::vector<std::uint64_t> trend_seeds{1, 2, 3};
  Seeds seeds;
  std::string out = "runs/default";
  int jobs = 1;

  /// Conditions whose train and dev splits are needed (T0 excluded).
  std::set<std::string> training_conditions() const {
    std::set<std::string> s;
    for (const auto& r : roster) s.insert(r.condition);
    for (const auto& c : subset_sources)
      if (c != "T0") s.insert(c);
    return s;
  }
  std::vector<std::string> single_conditions() const {
    std::vector<std::string> v{"T0"};
    v.insert(v.end(), conditions.begin(), conditions.end());
    return v;
  }
};

inline json to_json(const ExperimentConfig& c) {
  json roster = json::array();
  for (const auto& r : c.roster) roster.push_back({{"expert", r.expert}, {"condition", r.condition}});
  return {{"synth", dataset::to_json(c.synth)},
          {"encoder", experts::to_json(c.encoder)},
          {"init", experts::to_json(c.init)},
          {"lora", experts::to_json(c.lora)},
          {"shared_train", training::to_json(c.shared_train)},
          {"ase_train", training::to_json(c.ase_train)},
          {"fusion_train", training::to_json(c.fusion_train)},
          {"fusion", fusion::to_json(c.fusion)},
          {"k_list", c.k_list},
          {"primary_k", c.primary_k},
          {"conditions", c.conditions},
          {"roster", roster},
          {"mixed", c.mixed},
          {"subset_sources", c.subset_sources},
          {"subset_fraction", c.subset_fraction},
          {"trend_seeds", c.trend_seeds},
          {"seeds",
           {{"synth", c.seeds.synth},
            {"attack", c.seeds.attack},
            {"shared", c.seeds.shared},
            {"ase", c.seeds.ase},
            {"subset", c.seeds.subset},
            {"fusion", c.seeds.fusion}}},
          {"out", c.out},
          {"jobs", c.jobs}};
}

/// Resolves `j` against the defaults. Every problem found is appended to
/// `errors`; the returned config is only meaningful when `errors` is empty.
inline ExperimentConfig resolve(const json& j, std::vector<std::string>& errors) {
  ExperimentConfig c;
  static const std::set<std::string> known = {
      "synth",      "encoder",        "init",       "lora",           "shared_train",    "ase_train",
      "fusion_train", "fusion",       "k_list",     "primary_k",      "conditions",      "roster",
      "mixed",      "subset_sources", "subset_fraction", "trend_seeds", "seeds",          "out",
      "jobs"};
  if (!j.is_object()) {
    errors.push_back("config: top level must be a JSON object");
    return c;
  }
  for (const auto& [key, _] : j.items())
    if (!known.count(key)) errors.push_back("config: unknown key '" + key + "'");

  auto section = [&](const char* key, auto&& fn) {
    if (!j.contains(key)) return;
    try {
      fn(j.at(key));
    } catch (const std::exception& e) {
      errors.push_back(std::string("config.") + key + ": " + e.what());
    }
  };
  section("synth", [&](const json& s) {
    c.synth = dataset::synth_config_from_json(s);
    c.synth.validate();
  });
  section("encoder", [&](const json& s) { c.encoder = experts::encoder_config_from_json(s); });
  section("init", [&](const json& s) { c.init = experts::init_config_from_json(s); });
  section("lora", [&](const json& s) {
    c.lora.rank = s.value("rank", c.lora.rank);
    c.lora.alpha = s.value("alpha", c.lora.alpha);
    c.lora.dropout_p = s.value("dropout", c.lora.dropout_p);
    c.lora.mode = experts::parse_scale_mode(s.value("scale_mode", std::string(experts::scale_mode_name(c.lora.mode))));
    if (c.lora.rank < 1) throw InputError("rank must be >= 1");
    if (!(c.lora.dropout_p >= 0.0 && c.lora.dropout_p < 1.0)) throw InputError("dropout must be in [0, 1)");
  });
  section("shared_train", [&](const json& s) { c.shared_train = training::train_hyper_from_json(s, c.shared_train); });
  section("ase_train", [&](const json& s) { c.ase_train = training::train_hyper_from_json(s, c.ase_train); });
  section("fusion_train", [&](const json& s) { c.fusion_train = training::train_hyper_from_json(s, c.fusion_train); });
  section("fusion", [&](const json& s) { c.fusion = fusion::fusion_config_from_json(s, c.fusion); });
  section("k_list", [&](const json& s) { c.k_list = s.get<std::vector<std::size_t>>(); });
  section("primary_k", [&](const json& s) { c.primary_k = s.get<std::size_t>(); });
  section("conditions", [&](const json& s) { c.conditions = s.get<std::vector<std::string>>(); });
  section("roster", [&](const json& s) {
    c.roster.clear();
    for (const auto& r : s) c.roster.push_back({r.at("expert").get<std::string>(), r.at("condition").get<std::string>()});
  });
  section("mixed", [&](const json& s) { c.mixed = s.get<std::vector<std::string>>(); });
  section("subset_sources", [&](const json& s) { c.subset_sources = s.get<std::vector<std::string>>(); });
  section("subset_fraction", [&](const json& s) { c.subset_fraction = s.get<double>(); });
  section("trend_seeds", [&](const json& s) { c.trend_seeds = s.get<std::vector<std::uint64_t>>(); });
  section("seeds", [&](const json& s) {
    c.seeds.synth = s.value("synth", c.seeds.synth);
    c.seeds.attack = s.value("attack", c.seeds.attack);
    c.seeds.shared = s.value("shared", c.seeds.shared);
    c.seeds.ase = s.value("ase", c.seeds.ase);
    c.seeds.subset = s.value("subset", c.seeds.subset);
    c.seeds.fusion = s.value("fusion", c.seeds.fusion);
  });
  section("out", [&](const json& s) { c.out = s.get<std::string>(); });
  section("jobs", [&](const json& s) { c.jobs = s.get<int>(); });

  // Cross-references.
  const std::set<std::string> built(c.conditions.begin(), c.conditions.end());
  for (const auto& cond : c.conditions) {
    if (cond == "T0") errors.push_back("conditions: T0 is the clean corpus and must not be listed");
    else if (!attacks::has_preset(cond)) errors.push_back("conditions: unknown attack preset '" + cond + "'");
  }
  for (const auto& m : c.mixed)
    if (!attacks::has_preset(m)) errors.push_back("mixed: unknown attack preset '" + m + "'");
  std::set<std::string> names;
  std::string missing;
  for (const auto& r : c.roster) {
    if (r.expert == "E0" || !names.insert(r.expert).second) {
      errors.push_back("roster: expert name '" + r.expert + "' is reserved or duplicated");
    }
    if (r.condition != "T0" && !built.count(r.condition)) missing += " " + r.condition;
  }
  if (!missing.empty()) errors.push_back("roster references unbuilt condition variant(s):" + missing);
  if (c.roster.empty()) errors.push_back("roster: at least one attack-specific expert is required");
  missing.clear();
  for (const auto& s : c.subset_sources)
    if (s != "T0" && !built.count(s)) missing += " " + s;
  if (!missing.empty()) errors.push_back("subset_sources reference unbuilt condition variant(s):" + missing);
  if (c.subset_sources.empty()) errors.push_back("subset_sources: at least one source is required");
  if (!(c.subset_fraction > 0.0 && c.subset_fraction <= 1.0)) errors.push_back("subset_fraction must lie in (0, 1]");
  if (c.k_list.empty()) errors.push_back("k_list: at least one k is required");
  for (auto k : c.k_list) {
    if (k == 0) errors.push_back("k_list: k must be >= 1");
    else if (k > c.roster.size()) {
      errors.push_back("k exceeds expert count (k=" + std::to_string(k) + ", N=" + std::to_string(c.roster.size()) + ")");
    }
  }
  if (std::find(c.k_list.begin(), c.k_list.end(), c.primary_k) == c.k_list.end()) {
    errors.push_back("primary_k must be one of k_list");
  }
  if (c.jobs < 1) errors.push_back("jobs must be >= 1");
  if (c.out.empty()) errors.push_back("out must not be empty");
  if (c.encoder.frame_len > dataset::synth_length(c.synth)) {
    errors.push_back("encoder.frame_len exceeds the synthetic clip length");
  }
  return c;
}

inline ExperimentConfig resolve_or_throw(const json& j) {
  std::vector<std::string> errors;
  ExperimentConfig c = resolve(j, errors);
  if (!errors.empty()) {
    std::string msg = "invalid config (" + std::to_string(errors.size()) + " problem" + (errors.size() > 1 ? "s" : "") + "):";
    for (const auto& e : errors) msg += "\n  - " + e;
    throw InputError(msg);
  }
  return c;
}

inline json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw InputError("config file " + path + " is not valid JSON: " + e.what());
  }
}

inline ExperimentConfig load(const std::string& path) { return resolve_or_throw(read_json_file(path)); }

/// Replaces every stage seed with one derived from `seed`.
inline void override_seeds(ExperimentConfig& c, std::uint64_t seed) {
  c.seeds.synth = derive_seed(seed, "synth");
  c.seeds.attack = derive_seed(seed, "attack");
  c.seeds.shared = derive_seed(seed, "shared");
  c.seeds.ase = derive_seed(seed, "ase");
  c.seeds.subset = derive_seed(seed, "subset");
  c.seeds.fusion = derive_seed(seed, "fusion");
}

}  // namespace amulet::config
