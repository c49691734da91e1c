// Copyright 2026 The AMULET-Desk Authors
// SPDX-License-Identifier: Apache-2.0
//
// Named attack presets. "T1".."T6" are the single-attack conditions,
// "rawboost4".."rawboost8" and "noise_first"/"filter_first" the mixed ones.
// Conditions whose evaluation split carries unseen perturbations register a
// second spec under "<name>_eval".

#pragma once

#include <map>
#include <string>
#include <vector>

#include "amulet/attacks.hpp"

namespace amulet::attacks {

namespace presets {

using nlohmann::json;

inline AttackSpec rawboost1() {
  return leaf(AttackKind::convolutive, {{"n_notches", 5}, {"gain_db_min", -24.0}, {"gain_db_max", -6.0}, {"clip_drive", 2.0}});
}
inline AttackSpec rawboost2() { return leaf(AttackKind::impulsive_noise, {{"event_rate", 200.0}, {"amp_scale", 3.0}}); }
inline AttackSpec rawboost3() {
  return leaf(AttackKind::stationary_noise,
              {{"snr_min", 15.0}, {"snr_max", 30.0}, {"n_bands", 4}, {"gain_db_min", -20.0}, {"gain_db_max", 0.0}});
}
inline AttackSpec white_noise() { return leaf(AttackKind::gaussian_noise, {{"snr_min", 15.0}, {"snr_max", 30.0}}); }
inline AttackSpec color_noise() {
  return leaf(AttackKind::color_noise, {{"colors", json::array({"white", "pink", "brown"})}, {"snr_min", 15.0}, {"snr_max", 30.0}});
}

inline json seen_filter_bank() {
  return json::array({json{{"type", "lowpass"}, {"f1", 2000.0}}, json{{"type", "lowpass"}, {"f1", 4000.0}},
                      json{{"type", "highpass"}, {"f1", 300.0}}, json{{"type", "highpass"}, {"f1", 1000.0}},
                      json{{"type", "bandpass"}, {"f1", 300.0}, {"f2", 3400.0}}});
}
inline AttackSpec filter_bank() { return leaf(AttackKind::fir_filter, {{"bank", seen_filter_bank()}, {"taps", 101}}); }
inline AttackSpec filter_bank_with_unseen() {
  json bank = seen_filter_bank();
  bank.push_back(json{{"type", "lowpass"}, {"f1", 3000.0}});
  return leaf(AttackKind::fir_filter, {{"bank", bank}, {"taps", 101}});
}
inline AttackSpec codec() { return leaf(AttackKind::codec_sim, {{"bits", 8}, {"resample_hz", 8000}}); }

inline std::map<std::string, AttackSpec> build_registry() {
  std::map<std::string, AttackSpec> r;
  r["T1"] = rawboost1();
  r["T2"] = rawboost2();
  r["T3"] = rawboost3();
  r["T4"] = white_noise();
  r["T4_eval"] = color_noise();
  r["T5"] = filter_bank();
  r["T5_eval"] = filter_bank_with_unseen();
  r["T6"] = codec();
  r["rawboost4"] = compose({rawboost1(), rawboost2(), rawboost3()}, ComposeMode::series);
  r["rawboost5"] = compose({rawboost1(), rawboost2()}, ComposeMode::series);
  r["rawboost6"] = compose({rawboost1(), rawboost3()}, ComposeMode::series);
  r["rawboost7"] = compose({rawboost2(), rawboost3()}, ComposeMode::series);
  r["rawboost8"] = compose({rawboost1(), rawboost2()}, ComposeMode::parallel);
  r["noise_first"] = compose({white_noise(), filter_bank()}, ComposeMode::series);
  r["filter_first"] = compose({filter_bank(), white_noise()}, ComposeMode::series);
  std::uint64_t i = 1;
  for (auto& [name, spec] : r) spec.seed = derive_seed(0x414d554c4554ULL, name) ^ i++;
  return r;
}

}  // namespace presets

inline const std::map<std::string, AttackSpec>& preset_registry() {
  static const auto r = presets::build_registry();
  return r;
}

inline bool has_preset(const std::string& name) { return preset_registry().count(name) != 0; }

inline AttackSpec preset(const std::string& name) {
  const auto& r = preset_registry();
  auto it = r.find(name);
  if (it == r.end()) {
    std::string names;
    for (const auto& [n, _] : r) names += (names.empty() ? "" : ", ") + n;
    throw InputError("unknown attack preset '" + name + "'; known presets: " + names);
  }
  return it->second;
}

/// Spec used for the evaluation split of a condition.
inline AttackSpec eval_preset(const std::string& name) {
  return has_preset(name + "_eval") ? preset(name + "_eval") : preset(name);
}

/// Condition names (excluding "_eval" aliases and the clean "T0").
inline std::vector<std::string> condition_names() {
  std::vector<std::string> out;
  for (const auto& [n, _] : preset_registry()) {
    if (n.size() < 5 || n.substr(n.size() - 5) != "_eval") out.push_back(n);
  }
  return out;
}

}  // namespace amulet::attacks
