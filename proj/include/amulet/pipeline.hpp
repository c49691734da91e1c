// Copyright 2026 The AMULET-Desk Authors
// SPDX-License-Identifier: Apache-2.0
//
// The experiment as a chain of cached stages under one output root:
//
//   corpus/<cond>/manifest.jsonl + WAVs     synth, attack
//   models/E0.ckpt, models/<Ei>.ckpt        train-shared, train-ase
//   models/fusion_k<k>.ckpt                 train-fusion
//   scores/<cond>.csv                       evaluate
//   reports/table{1,2,4}.{csv,txt}          report
//   logs/<stage>.jsonl, stamps/, checksums.txt
//
// A stage is skipped when its stamp records the same input key and every
// recorded output still has the recorded checksum.

#pragma once

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "amulet/checkpoint.hpp"
#include "amulet/config.hpp"
#include "amulet/dataset.hpp"
#include "amulet/eval.hpp"
#include "amulet/experts.hpp"
#include "amulet/fusion.hpp"
#include "amulet/hashing.hpp"
#include "amulet/presets.hpp"
#include "amulet/training.hpp"

namespace amulet::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

using Logger = std::function<void(const std::string&)>;

inline void stderr_logger(const std::string& line) { std::fprintf(stderr, "%s\n", line.c_str()); }

inline std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot read " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + p.string());
  out << text;
}

/// Checksum of a file, or of every file below a directory (sorted relative
/// paths and contents).
inline std::uint64_t tree_checksum(const fs::path& p) {
  if (fs::is_regular_file(p)) return file_checksum(p.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(p))
    if (e.is_regular_file()) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  Fnv1a h;
  for (const auto& f : files) {
    h.update(fs::relative(f, p).generic_string());
    h.update_u64(file_checksum(f.string()));
  }
  return h.digest();
}

inline std::string key_of(const json& j) { return hex64(Fnv1a().update(j.dump()).digest()); }

inline std::string fused_name(std::size_t k) { return "E0+top-" + std::to_string(k); }

class Pipeline {
 public:
  Pipeline(config::ExperimentConfig cfg, fs::path root, Logger log = stderr_logger)
      : cfg_(std::move(cfg)), root_(std::move(root)), log_(std::move(log)) {
    if (!log_) log_ = [](const std::string&) {};
  }

  const fs::path& root() const { return root_; }
  const config::ExperimentConfig& config() const { return cfg_; }

  fs::path corpus_dir(const std::string& cond) const { return root_ / "corpus" / cond; }
  fs::path manifest_path(const std::string& cond) const { return corpus_dir(cond) / "manifest.jsonl"; }
  fs::path model_path(const std::string& name) const { return root_ / "models" / (name + ".ckpt"); }
  fs::path fusion_path(std::size_t k) const { return root_ / "models" / ("fusion_k" + std::to_string(k) + ".ckpt"); }
  fs::path scores_path(const std::string& cond) const { return root_ / "scores" / (cond + ".csv"); }
  fs::path report_path(const std::string& name) const { return root_ / "reports" / name; }

  // ------------------------------------------------------------ stage keys

  json synth_inputs() const { return {{"synth", dataset::to_json(synth_config())}}; }

  attacks::AttackSpec attack_spec(const std::string& cond, bool eval_split) const {
    attacks::AttackSpec s = eval_split ? attacks::eval_preset(cond) : attacks::preset(cond);
    s.seed = derive_seed(cfg_.seeds.attack, cond);
    return s;
  }
  bool needs_training_splits(const std::string& cond) const { return cfg_.training_conditions().count(cond) != 0; }

  std::string synth_key() const { return key_of(synth_inputs()); }
  std::string attack_key(const std::string& cond) const {
    return key_of({{"synth", synth_key()},
                   {"cond", cond},
                   {"spec", attacks::to_json(attack_spec(cond, false))},
                   {"eval_spec", attacks::to_json(attack_spec(cond, true))},
                   {"full", needs_training_splits(cond)}});
  }
  std::string corpus_key(const std::string& cond) const { return cond == "T0" ? synth_key() : attack_key(cond); }
  std::string shared_key() const {
    return key_of({{"corpus", synth_key()},
                   {"encoder", experts::to_json(cfg_.encoder)},
                   {"init", experts::to_json(cfg_.init)},
                   {"train", training::to_json(shared_hyper())}});
  }
  std::string ase_key(const config::RosterEntry& r) const {
    return key_of({{"shared", shared_key()},
                   {"corpus", corpus_key(r.condition)},
                   {"expert", r.expert},
                   {"lora", experts::to_json(cfg_.lora)},
                   {"train", training::to_json(ase_hyper(r))}});
  }
  std::string fusion_key(std::size_t k) const {
    json ases = json::array();
    for (const auto& r : cfg_.roster) ases.push_back(ase_key(r));
    json sources = json::array();
    for (const auto& s : cfg_.subset_sources) sources.push_back(corpus_key(s));
    fusion::FusionConfig fc = cfg_.fusion;
    fc.k = k;
    return key_of({{"ases", ases},
                   {"sources", sources},
                   {"fraction", cfg_.subset_fraction},
                   {"subset_seed", cfg_.seeds.subset},
                   {"fusion", fusion::to_json(fc)},
                   {"fusion_seed", cfg_.seeds.fusion},
                   {"train", training::to_json(fusion_hyper())}});
  }
  std::vector<std::string> eval_conditions() const {
    auto v = cfg_.single_conditions();
    v.insert(v.end(), cfg_.mixed.begin(), cfg_.mixed.end());
    return v;
  }
  std::string evaluate_key() const {
    json fused = json::array();
    for (auto k : cfg_.k_list) fused.push_back(fusion_key(k));
    json corpora = json::object();
    for (const auto& c : eval_conditions()) corpora[c] = corpus_key(c);
    return key_of({{"fused", fused}, {"corpora", corpora}});
  }
  std::string report_key() const {
    return key_of({{"evaluate", evaluate_key()}, {"k_list", cfg_.k_list}, {"primary_k", cfg_.primary_k}});
  }

  // ------------------------------------------------------------ stages

  void run_synth() {
    stage("synth", synth_key(), {corpus_dir("T0")}, [&] {
      fs::remove_all(corpus_dir("T0"));
      const auto m = dataset::build_corpus(synth_config(), corpus_dir("T0"), cfg_.jobs);
      dataset::save_manifest(m, manifest_path("T0"));
    });
  }

  void run_attack(const std::optional<std::string>& only = std::nullopt) {
    std::vector<std::string> conds = cfg_.conditions;
    conds.insert(conds.end(), cfg_.mixed.begin(), cfg_.mixed.end());
    if (only) {
      if (std::find(conds.begin(), conds.end(), *only) == conds.end()) throw InputError(unknown_condition(*only, conds));
      conds = {*only};
    }
    for (const auto& c : conds) {
      stage("attack:" + c, attack_key(c), {corpus_dir(c)}, [&] {
        const auto src = load_manifest_for("T0", "synth");
        fs::remove_all(corpus_dir(c));
        const auto spec = attack_spec(c, false), espec = attack_spec(c, true);
        const auto input = needs_training_splits(c) ? src : src.filter(dataset::Split::eval);
        const auto m = dataset::build_variant(input, spec, c, corpus_dir(c), cfg_.jobs, &espec);
        dataset::save_manifest(m, manifest_path(c));
      });
    }
  }

  void run_train_shared() {
    stage("train-shared", shared_key(), {model_path("E0")}, [&] {
      const auto m = load_manifest_for("T0", "synth");
      const auto tr = training::load_set(m, dataset::Split::train, cfg_.encoder, cfg_.jobs);
      const auto dv = training::load_set(m, dataset::Split::dev, cfg_.encoder, cfg_.jobs);
      EpochFile ef(root_ / "logs" / "train-shared.jsonl", "E0", log_);
      training::TrainResult r;
      const auto e0 = training::train_shared(cfg_.encoder, tr, dv, shared_hyper(), &r, ef.fn(), cfg_.init, cfg_.jobs);
      checkpoint::save_expert(e0, model_path("E0"));
      log_("train-shared: best epoch " + std::to_string(r.best_epoch) + ", dev EER " + std::to_string(r.best_dev_eer));
    });
  }

  void run_train_ase(const std::optional<std::string>& only_condition = std::nullopt) {
    std::vector<config::RosterEntry> todo;
    for (const auto& r : cfg_.roster)
      if (!only_condition || r.condition == *only_condition) todo.push_back(r);
    if (only_condition && todo.empty()) {
      std::vector<std::string> valid;
      for (const auto& r : cfg_.roster) valid.push_back(r.condition);
      throw InputError(unknown_condition(*only_condition, valid));
    }
    for (const auto& r : todo) {
      stage("train-ase:" + r.expert, ase_key(r), {model_path(r.expert)}, [&] {
        const auto e0 = load_shared();
        const auto m = load_manifest_for(r.condition, r.condition == "T0" ? "synth" : "attack");
        const auto tr = training::load_set(m, dataset::Split::train, cfg_.encoder, cfg_.jobs);
        const auto dv = training::load_set(m, dataset::Split::dev, cfg_.encoder, cfg_.jobs);
        EpochFile ef(root_ / "logs" / ("train-ase-" + r.expert + ".jsonl"), r.expert, log_);
        training::TrainResult res;
        const auto ase = training::train_ase(e0, r.expert, cfg_.lora, tr, dv, ase_hyper(r), &res, ef.fn(), cfg_.jobs);
        checkpoint::save_adapter(ase, model_path(r.expert));
        log_("train-ase " + r.expert + ": best epoch " + std::to_string(res.best_epoch) + ", dev EER " +
             std::to_string(res.best_dev_eer));
      });
    }
  }

  void run_train_fusion(const std::optional<std::size_t>& only_k = std::nullopt) {
    std::vector<std::size_t> ks = cfg_.k_list;
    if (only_k) {
      if (*only_k == 0 || *only_k > cfg_.roster.size()) {
        throw InputError("k exceeds expert count (k=" + std::to_string(*only_k) + ", N=" + std::to_string(cfg_.roster.size()) + ")");
      }
      ks = {*only_k};
    }
    std::optional<fusion::FeatureSet> train, dev;
    std::vector<experts::ExpertModel> bank;
    for (auto k : ks) {
      stage("train-fusion:k" + std::to_string(k), fusion_key(k), {fusion_path(k)}, [&] {
        if (!train) {
          bank = load_bank();
          std::vector<dataset::Manifest> sources;
          for (const auto& s : cfg_.subset_sources) sources.push_back(load_manifest_for(s, s == "T0" ? "synth" : "attack"));
          const auto subset = dataset::sample_fusion_subset(sources, cfg_.subset_fraction, cfg_.seeds.subset, root_ / "corpus");
          dataset::save_manifest(subset, root_ / "corpus" / "fusion_subset.jsonl");
          const auto tr = training::load_set(subset, dataset::Split::train, cfg_.encoder, cfg_.jobs);
          training::LabeledSet dv;
          for (const auto& m : sources) {
            auto part = training::load_set(m, dataset::Split::dev, cfg_.encoder, cfg_.jobs);
            for (std::size_t i = 0; i < part.size(); ++i) {
              dv.features.push_back(std::move(part.features[i]));
              dv.labels.push_back(part.labels[i]);
              dv.ids.push_back(part.ids[i]);
            }
          }
          train = fusion::build_feature_set(bank, tr, cfg_.jobs);
          dev = fusion::build_feature_set(bank, dv, cfg_.jobs);
        }
        fusion::FusionConfig fc = cfg_.fusion;
        fc.k = k;
        auto sys = fusion::make_system(bank, fc, cfg_.seeds.fusion);
        EpochFile ef(root_ / "logs" / ("train-fusion-k" + std::to_string(k) + ".jsonl"), fused_name(k), log_);
        const auto res = fusion::train_fusion(sys, *train, *dev, fusion_hyper(), ef.fn(), cfg_.jobs);
        std::vector<checkpoint::BankRef> refs;
        refs.push_back(checkpoint::make_ref("E0", model_path("E0"), fusion_path(k).parent_path()));
        for (const auto& r : cfg_.roster) {
          refs.push_back(checkpoint::make_ref(r.expert, model_path(r.expert), fusion_path(k).parent_path()));
        }
        checkpoint::save_fusion(sys, refs, fusion_path(k));
        log_("train-fusion k=" + std::to_string(k) + ": best epoch " + std::to_string(res.best_epoch) + ", dev EER " +
             std::to_string(res.best_dev_eer));
      });
    }
  }

  /// System rows in report order.
  std::vector<std::string> systems() const {
    std::vector<std::string> s{"E0"};
    for (const auto& r : cfg_.roster) s.push_back(r.expert);
    s.push_back("Ensemble");
    for (auto k : cfg_.k_list) s.push_back(fused_name(k));
    return s;
  }

  void run_evaluate() {
    std::vector<fs::path> outs;
    for (const auto& c : eval_conditions()) outs.push_back(scores_path(c));
    stage("evaluate", evaluate_key(), outs, [&] {
      const auto bank = load_bank();
      std::vector<fusion::FusionSystem> fused;
      for (auto k : cfg_.k_list) {
        if (!fs::exists(fusion_path(k))) {
          throw MissingArtifactError("missing " + fusion_path(k).string() + "; run the train-fusion stage first");
        }
        fused.push_back(checkpoint::load_fusion(fusion_path(k)));
      }
      const auto names = systems();
      for (const auto& c : eval_conditions()) {
        const auto m = load_manifest_for(c, c == "T0" ? "synth" : "attack");
        const auto ev = training::load_set(m, dataset::Split::eval, cfg_.encoder, cfg_.jobs);
        if (ev.size() == 0) throw InputError("condition " + c + " has no eval clips");
        std::vector<std::vector<double>> rows(ev.size());
        dataset::parallel_for(ev.size(), cfg_.jobs, [&](std::size_t i) {
          const auto z = fusion::expert_features(bank, ev.features[i]);
          std::vector<double> row;
          for (std::size_t e = 0; e < bank.size(); ++e) {
            row.push_back(experts::logit_score(experts::head_logits(bank[e], z[e])));
          }
          row.push_back(experts::logit_score(fusion::ensemble_from_features(bank, z)));
          for (const auto& f : fused) row.push_back(experts::logit_score(fusion::fused_logits(f, z)));
          rows[i] = std::move(row);
        });
        std::string out = "clip_id,label";
        for (const auto& n : names) out += "," + n;
        out += "\n";
        for (std::size_t i = 0; i < ev.size(); ++i) {
          out += ev.ids[i] + (ev.labels[i] == 0 ? ",bonafide" : ",spoof");
          for (double v : rows[i]) out += "," + eval::fmt_full(v);
          out += "\n";
        }
        write_text(scores_path(c), out);
      }
    });
  }

  /// Score sets for every system on `cond`, read back from scores/<cond>.csv.
  std::vector<eval::ScoreSet> read_scores(const std::string& cond) const {
    const fs::path p = scores_path(cond);
    if (!fs::exists(p)) throw MissingArtifactError("missing " + p.string() + "; run the evaluate stage first");
    std::istringstream in(read_text(p));
    std::string line;
    std::getline(in, line);
    std::vector<std::string> header;
    {
      std::stringstream ls(line);
      std::string tok;
      while (std::getline(ls, tok, ',')) header.push_back(tok);
    }
    std::vector<eval::ScoreSet> sets(header.size() - 2);
    for (std::size_t s = 0; s < sets.size(); ++s) {
      sets[s].system = header[s + 2];
      sets[s].condition = cond;
    }
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      std::stringstream ls(line);
      std::string id, label, tok;
      std::getline(ls, id, ',');
      std::getline(ls, label, ',');
      for (std::size_t s = 0; s < sets.size(); ++s) {
        if (!std::getline(ls, tok, ',')) throw InputError("malformed score file " + p.string());
        (label == "bonafide" ? sets[s].bona_scores : sets[s].spoof_scores).push_back(std::stod(tok));
      }
    }
    return sets;
  }

  void run_report() {
    const std::vector<fs::path> outs = {report_path("table1.csv"), report_path("table1.txt"), report_path("table2.csv"),
                                        report_path("table2.txt"), report_path("table4.csv"), report_path("table4.txt")};
    stage("report", report_key(), outs, [&] {
      const auto names = systems();
      const auto tp = trainable_counts();
      auto matrix = [&](const std::string& title, const std::vector<std::string>& conds) {
        std::vector<eval::ScoreSet> sets;
        for (const auto& c : conds) {
          auto s = read_scores(c);
          sets.insert(sets.end(), s.begin(), s.end());
        }
        return eval::build_report(title, names, conds, sets, tp);
      };
      auto t1 = matrix("EER (%) per expert and fusion strategy, single attacks", cfg_.single_conditions());
      t1.footnotes.push_back("TP: trainable encoder parameters (ASEs: adapters only); fused rows: gate, LN and head");
      write_text(report_path("table1.csv"), eval::render_csv(t1));
      write_text(report_path("table1.txt"), eval::render_text(t1));
      auto t4 = matrix("EER (%) under mixed attacks", cfg_.mixed);
      write_text(report_path("table4.csv"), eval::render_csv(t4));
      write_text(report_path("table4.txt"), eval::render_text(t4));
      write_text(report_path("table2.csv"), table2_csv());
      write_text(report_path("table2.txt"), table2_text());
    });
  }

  void reproduce() {
    const auto t0 = std::chrono::steady_clock::now();
    run_synth();
    run_attack();
    run_train_shared();
    run_train_ase();
    run_train_fusion();
    run_evaluate();
    run_report();
    write_checksums();
    const double sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    log_("reproduce: done in " + std::to_string(sec) + " s");
  }

  /// Sorted "<checksum>  <relative path>" lines for every artifact.
  std::string artifact_checksums() const {
    std::vector<std::string> lines;
    for (const auto& e : fs::recursive_directory_iterator(root_)) {
      if (!e.is_regular_file()) continue;
      const auto rel = fs::relative(e.path(), root_).generic_string();
      if (rel == "checksums.txt") continue;
      lines.push_back(hex64(file_checksum(e.path().string())) + "  " + rel);
    }
    std::sort(lines.begin(), lines.end(), [](const std::string& a, const std::string& b) {
      return a.substr(18) < b.substr(18);
    });
    std::string out;
    for (const auto& l : lines) out += l + "\n";
    return out;
  }
  void write_checksums() const { write_text(root_ / "checksums.txt", artifact_checksums()); }

  // ------------------------------------------------------------ parameter table

  std::map<std::string, std::size_t> trainable_counts() const {
    std::map<std::string, std::size_t> tp;
    if (!fs::exists(model_path("E0"))) return tp;
    const auto bank = load_bank(false);
    tp["E0"] = experts::count_trainable(bank[0]).total;
    for (std::size_t i = 1; i < bank.size(); ++i) tp[bank[i].name] = experts::count_trainable(bank[i]).trainable;
    for (auto k : cfg_.k_list) {
      if (!fs::exists(fusion_path(k))) continue;
      const auto s = checkpoint::load_fusion(fusion_path(k));
      std::size_t n = 0;
      for (const auto* p : s.params())
        if (!p->frozen) n += p->value.size();
      tp[fused_name(k)] = n;
    }
    return tp;
  }

  std::string table2_csv() const {
    const auto bank = load_bank(false);
    const auto full = experts::count_trainable(bank[0]).total;
    std::string out = "system,method,trainable_params,base_params,percent\n";
    out += "E0,full," + std::to_string(full) + "," + std::to_string(full) + "," + eval::fmt_full(eval::param_ratio(full, full)) + "\n";
    for (std::size_t i = 1; i < bank.size(); ++i) {
      const auto c = experts::count_trainable(bank[i]);
      out += bank[i].name + ",lora," + std::to_string(c.trainable) + "," + std::to_string(c.total) + "," +
             eval::fmt_full(eval::param_ratio(static_cast<double>(c.trainable), static_cast<double>(full))) + "\n";
    }
    return out;
  }

  std::string table2_text() const {
    const auto bank = load_bank(false);
    const auto full = experts::count_trainable(bank[0]).total;
    std::string out = "Trainable parameters: full fine-tuning vs LoRA\n";
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-8s %-6s %12s %12s %9s\n", "Model", "Method", "TP", "Base", "TP/Base");
    out += buf;
    std::snprintf(buf, sizeof buf, "%-8s %-6s %12zu %12zu %8.2f%%\n", "E0", "FFT", full, full, 100.0);
    out += buf;
    for (std::size_t i = 1; i < bank.size(); ++i) {
      const auto c = experts::count_trainable(bank[i]);
      std::snprintf(buf, sizeof buf, "%-8s %-6s %12zu %12zu %8.2f%%\n", bank[i].name.c_str(), "LoRA", c.trainable,
                    c.total, eval::param_ratio(static_cast<double>(c.trainable), static_cast<double>(full)));
      out += buf;
    }
    std::snprintf(buf, sizeof buf, "  * reference scale: 3.59M adapter / 318M encoder parameters = %.2f%%\n",
                  eval::param_ratio(3.59e6, 318e6));
    out += buf;
    return out;
  }

  // ------------------------------------------------------------ loading

  experts::ExpertModel load_shared() const {
    if (!fs::exists(model_path("E0"))) {
      throw MissingArtifactError("missing " + model_path("E0").string() + "; run the train-shared stage first");
    }
    return checkpoint::load_expert(model_path("E0"));
  }

  // Counting wants the frozen flags as trained; scoring freezes everything.
  std::vector<experts::ExpertModel> load_bank(bool freeze = true) const {
    std::vector<experts::ExpertModel> bank{load_shared()};
    for (const auto& r : cfg_.roster) {
      if (!fs::exists(model_path(r.expert))) {
        throw MissingArtifactError("missing " + model_path(r.expert).string() + "; run the train-ase stage first");
      }
      bank.push_back(checkpoint::load_adapter(model_path(r.expert), bank[0]));
    }
    if (freeze)
      for (auto& m : bank) experts::freeze_all(m);
    return bank;
  }

  dataset::Manifest load_manifest_for(const std::string& cond, const std::string& producer) const {
    if (!fs::exists(manifest_path(cond))) {
      throw MissingArtifactError("missing " + manifest_path(cond).string() + "; run the " + producer + " stage first");
    }
    return dataset::load_manifest(manifest_path(cond));
  }

 private:
  dataset::SynthConfig synth_config() const {
    dataset::SynthConfig s = cfg_.synth;
    s.seed = cfg_.seeds.synth;
    return s;
  }
  training::TrainHyper shared_hyper() const {
    auto h = cfg_.shared_train;
    h.seed = cfg_.seeds.shared;
    return h;
  }
  training::TrainHyper ase_hyper(const config::RosterEntry& r) const {
    auto h = cfg_.ase_train;
    h.seed = derive_seed(cfg_.seeds.ase, r.expert);
    return h;
  }
  training::TrainHyper fusion_hyper() const {
    auto h = cfg_.fusion_train;
    h.seed = cfg_.seeds.fusion;
    return h;
  }

  static std::string unknown_condition(const std::string& c, const std::vector<std::string>& valid) {
    std::string v;
    for (const auto& s : valid) v += (v.empty() ? "" : ", ") + s;
    return "unknown condition '" + c + "'; valid conditions: " + v;
  }

  /// Appends one JSON line per epoch to a log file and mirrors it to the logger.
  class EpochFile {
   public:
    EpochFile(const fs::path& path, std::string stage, Logger log) : stage_(std::move(stage)), log_(std::move(log)) {
      fs::create_directories(path.parent_path());
      out_.open(path, std::ios::binary | std::ios::trunc);
      if (!out_) throw IoError("cannot write " + path.string());
    }
    training::EpochLogger fn() {
      return [this](const training::EpochLog& e) {
        const auto line = training::to_log_line(stage_, e);
        out_ << line << "\n";
        out_.flush();
        if (log_) log_(line);
      };
    }

   private:
    std::string stage_;
    Logger log_;
    std::ofstream out_;
  };

  fs::path stamp_path(const std::string& stage) const {
    std::string f = stage;
    std::replace(f.begin(), f.end(), ':', '_');
    return root_ / "stamps" / (f + ".json");
  }

  bool up_to_date(const std::string& stage, const std::string& key) const {
    const auto p = stamp_path(stage);
    if (!fs::exists(p)) return false;
    json j;
    try {
      j = json::parse(read_text(p));
    } catch (const json::exception&) {
      return false;
    }
    if (j.value("key", std::string()) != key) return false;
    for (const auto& [rel, sum] : j.at("outputs").items()) {
      const auto f = root_ / rel;
      if (!fs::exists(f) || hex64(tree_checksum(f)) != sum.get<std::string>()) return false;
    }
    return true;
  }

  template <typename Fn>
  void stage(const std::string& name, const std::string& key, const std::vector<fs::path>& outputs, Fn&& work) {
    if (up_to_date(name, key)) {
      log_("skip " + name + ": outputs up to date");
      return;
    }
    const auto t0 = std::chrono::steady_clock::now();
    log_("run " + name);
    fs::remove(stamp_path(name));
    work();
    json outs = json::object();
    for (const auto& o : outputs) {
      if (!fs::exists(o)) throw InternalError("stage " + name + " did not produce " + o.string());
      outs[fs::relative(o, root_).generic_string()] = hex64(tree_checksum(o));
    }
    write_text(stamp_path(name), json{{"stage", name}, {"key", key}, {"outputs", outs}}.dump(1) + "\n");
    const double sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    char buf[96];
    std::snprintf(buf, sizeof buf, "done %s in %.1f s", name.c_str(), sec);
    log_(buf);
  }

  config::ExperimentConfig cfg_;
  fs::path root_;
  Logger log_;
};

}  // namespace amulet::pipeline
