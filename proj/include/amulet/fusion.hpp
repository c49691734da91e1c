// Copyright 2026 The AMULET-Desk Authors
// SPDX-License-Identifier: Apache-2.0
//
// Gated fusion over a frozen expert bank: a linear gate on the shared
// expert's pooled features picks the top-k attack-specific experts, their
// weighted features are added to the shared ones and layer-normalized, and
// an attention-pool / projection / two-layer head scores the result.
// Also holds the mean-logit ensemble baseline.

#pragma once

#include <algorithm>
#include <map>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "amulet/autograd.hpp"
#include "amulet/eval.hpp"
#include "amulet/experts.hpp"
#include "amulet/hashing.hpp"
#include "amulet/training.hpp"

namespace amulet::fusion {

using experts::Parameter;

struct FusionConfig {
  std::size_t k = 5;
  bool renormalize = false;  // softmax over the selected pre-activations only
  bool ln_affine = true;     // train the LayerNorm gain/bias
  double ln_eps = 1e-5;
  double gate_init_std = 0.02;

  void validate() const {
    if (k == 0) throw InputError("fusion: k must be >= 1");
    if (!(ln_eps > 0.0)) throw InputError("fusion: ln_eps must be > 0");
    if (!(gate_init_std >= 0.0)) throw InputError("fusion: gate_init_std must be >= 0");
  }
};

inline nlohmann::json to_json(const FusionConfig& c) {
  return {{"k", c.k}, {"renormalize", c.renormalize}, {"ln_affine", c.ln_affine}, {"ln_eps", c.ln_eps},
          {"gate_init_std", c.gate_init_std}};
}

inline FusionConfig fusion_config_from_json(const nlohmann::json& j, FusionConfig c = {}) {
  c.k = j.value("k", c.k);
  c.renormalize = j.value("renormalize", c.renormalize);
  c.ln_affine = j.value("ln_affine", c.ln_affine);
  c.ln_eps = j.value("ln_eps", c.ln_eps);
  c.gate_init_std = j.value("gate_init_std", c.gate_init_std);
  c.validate();
  return c;
}

struct GateDecision {
  std::vector<double> scores;         // softmax over all N experts
  std::vector<std::size_t> selected;  // descending score, ties to the lower index
  std::vector<double> weights;        // applied weight per selected expert
};

/// Indices of the k largest scores, largest first; equal scores keep index order.
inline std::vector<std::size_t> top_k(std::span<const double> scores, std::size_t k) {
  if (k == 0) throw InputError("top_k: k must be >= 1");
  if (k > scores.size()) {
    throw InputError("k exceeds expert count (k=" + std::to_string(k) + ", N=" + std::to_string(scores.size()) + ")");
  }
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  idx.resize(k);
  return idx;
}

struct FusionSystem {
  std::vector<experts::ExpertModel> bank;  // [E0, E1..EN], all frozen
  FusionConfig cfg;
  Parameter gate_W;   // D x N
  Parameter gate_b;   // 1 x N
  Parameter ln_gain;  // 1 x D
  Parameter ln_bias;  // 1 x D
  Parameter pool_a;   // D x 1
  Parameter proj;     // D x D
  Parameter c_W1;     // D x D
  Parameter c_b1;     // 1 x D
  Parameter c_W2;     // D x 2
  Parameter c_b2;     // 1 x 2
  bool gate_disabled = false;  // shared-expert-only path

  std::size_t n_ase() const { return bank.empty() ? 0 : bank.size() - 1; }
  std::size_t dim() const { return bank.at(0).cfg.out_dim(); }

  static const std::vector<std::string>& param_names() {
    static const std::vector<std::string> n = {"gate.W", "gate.b", "ln.gain", "ln.bias", "P.pool_a",
                                               "P.proj", "C.W1",   "C.b1",    "C.W2",    "C.b2"};
    return n;
  }
  std::vector<Parameter*> params() {
    return {&gate_W, &gate_b, &ln_gain, &ln_bias, &pool_a, &proj, &c_W1, &c_b1, &c_W2, &c_b2};
  }
  std::vector<const Parameter*> params() const {
    std::vector<const Parameter*> out;
    for (auto* p : const_cast<FusionSystem*>(this)->params()) out.push_back(p);
    return out;
  }
};

inline void validate_bank(const std::vector<experts::ExpertModel>& bank, std::size_t k) {
  if (bank.size() < 2) throw InputError("fusion: the bank needs the shared expert and at least one ASE");
  const std::size_t D = bank[0].cfg.out_dim();
  for (const auto& m : bank) {
    if (m.cfg.out_dim() != D) throw ShapeError("fusion: expert '" + m.name + "' has a different output dimension");
    if (m.cfg.feature_dim() != bank[0].cfg.feature_dim()) {
      throw ShapeError("fusion: expert '" + m.name + "' has a different frame layout");
    }
  }
  if (k > bank.size() - 1) {
    throw InputError("k exceeds expert count (k=" + std::to_string(k) + ", N=" + std::to_string(bank.size() - 1) + ")");
  }
}

/// Fresh fusion parameters over `bank`. Gate column j is drawn from a seed
/// tied to expert j's name, so permuting the bank permutes the columns.
inline FusionSystem make_system(std::vector<experts::ExpertModel> bank, const FusionConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  validate_bank(bank, cfg.k);
  FusionSystem s;
  s.cfg = cfg;
  for (auto& m : bank) experts::freeze_all(m);
  s.bank = std::move(bank);
  const std::size_t D = s.dim(), N = s.n_ase();
  const double sd = 1.0 / std::sqrt(static_cast<double>(D));

  s.gate_W = {"gate.W", Tensor2(D, N), false};
  for (std::size_t j = 0; j < N; ++j) {
    std::mt19937_64 rng(derive_seed(seed, "gate:" + s.bank[j + 1].name));
    std::normal_distribution<double> nd(0.0, cfg.gate_init_std);
    for (std::size_t i = 0; i < D; ++i) s.gate_W.value(i, j) = nd(rng);
  }
  s.gate_b = {"gate.b", Tensor2(1, N), false};
  s.ln_gain = {"ln.gain", Tensor2(1, D, 1.0), !cfg.ln_affine};
  s.ln_bias = {"ln.bias", Tensor2(1, D), !cfg.ln_affine};
  auto draw = [&](const char* tag, std::size_t r, std::size_t c) {
    std::mt19937_64 rng(derive_seed(seed, tag));
    return experts::normal_tensor(r, c, sd, rng);
  };
  // Zero attention vector = mean pooling, identity projection; training moves off them.
  s.pool_a = {"P.pool_a", Tensor2(D, 1), false};
  s.proj = {"P.proj", Tensor2(D, D), false};
  for (std::size_t i = 0; i < D; ++i) s.proj.value(i, i) = 1.0;
  s.c_W1 = {"C.W1", draw("C.W1", D, D), false};
  s.c_b1 = {"C.b1", Tensor2(1, D), false};
  s.c_W2 = {"C.W2", draw("C.W2", D, 2), false};
  s.c_b2 = {"C.b2", Tensor2(1, 2), false};
  return s;
}

// ---------------------------------------------------------------- graph pieces

struct FusionBound {
  ag::Var gate_W, gate_b, ln_gain, ln_bias, pool_a, proj, c_W1, c_b1, c_W2, c_b2;
};

inline FusionBound bind(const FusionSystem& s, bool track) {
  auto b = [&](const Parameter& p) { return experts::bind_param(p, track); };
  return {b(s.gate_W), b(s.gate_b), b(s.ln_gain), b(s.ln_bias), b(s.pool_a),
          b(s.proj),   b(s.c_W1),   b(s.c_b1),    b(s.c_W2),    b(s.c_b2)};
}

struct GateGraph {
  GateDecision decision;
  std::vector<ag::Var> weights;  // one 1x1 node per selected expert
};

/// Gate on the time-mean of z0. Selection indices are constants of the
/// step; gradients reach the gate through the selected weights only.
inline GateGraph gate_graph(const ag::Var& z0, const ag::Var& gate_W, const ag::Var& gate_b, std::size_t k,
                            bool renormalize) {
  if (gate_W.rows() != z0.cols()) {
    throw ShapeError("gate: weight " + gate_W.value().shape_str() + " does not match features " + z0.value().shape_str());
  }
  const ag::Var pre = ag::add_row(ag::matmul(ag::mean_rows(z0), gate_W), gate_b);
  const ag::Var w = ag::softmax(pre);
  GateGraph g;
  g.decision.scores = w.value().data();
  g.decision.selected = top_k(g.decision.scores, k);
  if (renormalize) {
    const ag::Var sel = ag::softmax(ag::select_cols(pre, g.decision.selected));
    for (std::size_t j = 0; j < g.decision.selected.size(); ++j) g.weights.push_back(ag::pick(sel, j));
  } else {
    for (auto i : g.decision.selected) g.weights.push_back(ag::pick(w, i));
  }
  for (const auto& v : g.weights) g.decision.weights.push_back(v.item());
  return g;
}

/// LN(sum_{j in selected} w_j z_j + z0), summed in selection order.
inline ag::Var fuse_graph(const std::vector<ag::Var>& z_ase, const ag::Var& z0, const std::vector<std::size_t>& selected,
                          const std::vector<ag::Var>& weights, const ag::Var& ln_gain, const ag::Var& ln_bias,
                          double eps) {
  if (selected.size() != weights.size()) throw ShapeError("fuse: one weight per selected expert is required");
  ag::Var acc;
  bool have = false;
  for (std::size_t j = 0; j < selected.size(); ++j) {
    if (selected[j] >= z_ase.size()) throw ShapeError("fuse: selected index out of range");
    const ag::Var& z = z_ase[selected[j]];
    if (!z.value().same_shape(z0.value())) {
      throw ShapeError("fuse: expert features " + z.value().shape_str() + " vs shared " + z0.value().shape_str());
    }
    const ag::Var term = ag::scale_by(z, weights[j]);
    acc = have ? ag::add(acc, term) : term;
    have = true;
  }
  const ag::Var sum = have ? ag::add(acc, z0) : z0;
  return ag::layer_norm(sum, ln_gain, ln_bias, eps);
}

/// Attention pooling over time, projection, then tanh hidden layer and logits.
inline ag::Var head_graph(const ag::Var& z, const FusionBound& b) {
  const ag::Var alpha = ag::softmax(ag::transpose(ag::matmul(z, b.pool_a)));  // 1 x T
  const ag::Var pooled = ag::matmul(ag::matmul(alpha, z), b.proj);
  const ag::Var h = ag::tanh(ag::add_row(ag::matmul(pooled, b.c_W1), b.c_b1));
  return ag::add_row(ag::matmul(h, b.c_W2), b.c_b2);
}

/// Full fused forward over precomputed expert features z[0] = z0, z[i] = z_i.
inline ag::Var fused_graph(const FusionSystem& s, const FusionBound& b, const std::vector<Tensor2>& z,
                           GateDecision* decision = nullptr) {
  if (z.size() != s.bank.size()) throw ShapeError("fusion: expected one feature map per expert");
  const ag::Var z0 = ag::Var::constant(z[0]);
  ag::Var fused;
  if (s.gate_disabled) {
    fused = ag::layer_norm(z0, b.ln_gain, b.ln_bias, s.cfg.ln_eps);
    if (decision) *decision = {};
  } else {
    GateGraph g = gate_graph(z0, b.gate_W, b.gate_b, s.cfg.k, s.cfg.renormalize);
    std::vector<ag::Var> zs;
    for (std::size_t i = 1; i < z.size(); ++i) zs.push_back(ag::Var::constant(z[i]));
    fused = fuse_graph(zs, z0, g.decision.selected, g.weights, b.ln_gain, b.ln_bias, s.cfg.ln_eps);
    if (decision) *decision = std::move(g.decision);
  }
  return head_graph(fused, b);
}

// ---------------------------------------------------------------- plain API

inline GateDecision gate_scores(const Tensor2& z0, const Tensor2& gate_W, const Tensor2& gate_b, std::size_t k,
                                bool renormalize = false) {
  return gate_graph(ag::Var::constant(z0), ag::Var::constant(gate_W), ag::Var::constant(gate_b), k, renormalize)
      .decision;
}

inline Tensor2 fuse(const std::vector<Tensor2>& z_ase, const Tensor2& z0, const GateDecision& d, const Tensor2& gain,
                    const Tensor2& bias, double eps = 1e-5) {
  if (!d.weights.empty() && d.weights.size() != d.selected.size()) {
    throw ShapeError("fuse: one weight per selected expert is required");
  }
  std::vector<ag::Var> zs, ws;
  for (const auto& z : z_ase) zs.push_back(ag::Var::constant(z));
  for (std::size_t j = 0; j < d.selected.size(); ++j) {
    if (d.weights.empty() && d.selected[j] >= d.scores.size()) throw ShapeError("fuse: selected index out of range");
    const double w = d.weights.empty() ? d.scores.at(d.selected[j]) : d.weights.at(j);
    ws.push_back(ag::Var::constant(Tensor2(1, 1, w)));
  }
  return fuse_graph(zs, ag::Var::constant(z0), d.selected, ws, ag::Var::constant(gain), ag::Var::constant(bias), eps)
      .value();
}

inline std::vector<double> head_forward(const FusionSystem& s, const Tensor2& z) {
  const Tensor2 out = head_graph(ag::Var::constant(z), bind(s, false)).value();
  return {out[0], out[1]};
}

/// Encoder outputs of every bank member for one clip's frames.
inline std::vector<Tensor2> expert_features(const std::vector<experts::ExpertModel>& bank, const Tensor2& frames) {
  std::vector<Tensor2> z;
  z.reserve(bank.size());
  for (const auto& m : bank) z.push_back(experts::encoder_forward(m, frames));
  return z;
}

inline std::vector<double> fused_logits(const FusionSystem& s, const std::vector<Tensor2>& z,
                                        GateDecision* decision = nullptr) {
  const Tensor2 out = fused_graph(s, bind(s, false), z, decision).value();
  return {out[0], out[1]};
}

inline double predict(const FusionSystem& s, const AudioClip& clip) {
  return experts::logit_score(fused_logits(s, expert_features(s.bank, experts::frame_features(clip, s.bank[0].cfg))));
}

/// Mean of the given logit vectors.
inline std::vector<double> ensemble_logits(const std::vector<std::vector<double>>& logits) {
  if (logits.empty()) throw InputError("ensemble_logits: no experts");
  std::vector<double> out(logits[0].size(), 0.0);
  for (const auto& l : logits) {
    if (l.size() != out.size()) throw ShapeError("ensemble_logits: logit vectors differ in length");
    for (std::size_t j = 0; j < out.size(); ++j) out[j] += l[j];
  }
  for (auto& v : out) v /= static_cast<double>(logits.size());
  return out;
}

/// Every bank member scores with its own head; logits are averaged.
inline std::vector<double> ensemble_from_features(const std::vector<experts::ExpertModel>& bank,
                                                  const std::vector<Tensor2>& z) {
  std::vector<std::vector<double>> l;
  for (std::size_t i = 0; i < bank.size(); ++i) l.push_back(experts::head_logits(bank[i], z[i]));
  return ensemble_logits(l);
}

// ---------------------------------------------------------------- training

/// Cached expert features for a labelled set (experts are frozen, so these
/// never change during fusion training).
struct FeatureSet {
  std::vector<std::vector<Tensor2>> z;
  std::vector<int> labels;
  std::size_t size() const { return z.size(); }
};

inline FeatureSet build_feature_set(const std::vector<experts::ExpertModel>& bank, const training::LabeledSet& set,
                                    int jobs = 1) {
  FeatureSet f;
  f.z.resize(set.size());
  dataset::parallel_for(set.size(), jobs, [&](std::size_t i) { f.z[i] = expert_features(bank, set.features[i]); });
  f.labels = set.labels;
  return f;
}

inline training::DevMetrics fusion_dev_metrics(const FusionSystem& s, const FeatureSet& dev, int jobs = 1) {
  std::vector<std::vector<double>> logits(dev.size());
  dataset::parallel_for(dev.size(), jobs, [&](std::size_t i) { logits[i] = fused_logits(s, dev.z[i]); });
  eval::ScoreSet ss;
  double loss = 0.0;
  for (std::size_t i = 0; i < dev.size(); ++i) {
    (dev.labels[i] == 0 ? ss.bona_scores : ss.spoof_scores).push_back(experts::logit_score(logits[i]));
    loss += amulet::cross_entropy(logits[i], dev.labels[i]);
  }
  return {eval::compute_eer(ss).eer, loss / static_cast<double>(dev.size())};
}

inline std::vector<std::uint64_t> bank_checksums(const FusionSystem& s) {
  std::vector<std::uint64_t> out;
  for (const auto& m : s.bank) out.push_back(experts::model_checksum(m));
  return out;
}

/// Trains gate, LN, P and C; the bank must come out byte-identical.
inline training::TrainResult train_fusion(FusionSystem& s, const FeatureSet& train, const FeatureSet& dev,
                                          const training::TrainHyper& h, const training::EpochLogger& log = {},
                                          int jobs = 1) {
  if (train.size() == 0 || dev.size() == 0) throw InputError("train_fusion: train and dev sets must be non-empty");
  validate_bank(s.bank, s.cfg.k);
  const auto bank_before = bank_checksums(s);
  FusionSystem best = s;

  auto step = [&](std::span<const std::size_t> idx, double lr) {
    const FusionBound b = bind(s, true);
    ag::Var total;
    for (std::size_t n = 0; n < idx.size(); ++n) {
      const ag::Var l = ag::cross_entropy(fused_graph(s, b, train.z[idx[n]]), train.labels[idx[n]]);
      total = n == 0 ? l : ag::add(total, l);
    }
    const ag::Var loss = ag::scale(total, 1.0 / static_cast<double>(idx.size()));
    ag::backward(loss);
    std::vector<Parameter*> live;
    std::vector<ag::Var> vars;
    const std::vector<ag::Var> all = {b.gate_W, b.gate_b, b.ln_gain, b.ln_bias, b.pool_a,
                                      b.proj,   b.c_W1,   b.c_b1,    b.c_W2,    b.c_b2};
    auto ps = s.params();
    for (std::size_t i = 0; i < ps.size(); ++i) {
      if (!ps[i]->frozen) {
        live.push_back(ps[i]);
        vars.push_back(all[i]);
      }
    }
    training::sgd_update(live, vars, lr);
    return loss.item();
  };
  auto dev_fn = [&] { return fusion_dev_metrics(s, dev, jobs); };
  auto snap = [&] { best = s; };
  training::TrainResult r = training::run_training(h, train.size(), step, dev_fn, snap, log);
  s = std::move(best);
  if (bank_checksums(s) != bank_before) {
    throw FrozenContractError("fusion training modified an expert in the bank");
  }
  return r;
}

}  // namespace amulet::fusion
