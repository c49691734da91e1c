// Copyright 2026 The AMULET-Desk Authors
// SPDX-License-Identifier: Apache-2.0
//
// Mini-batch gradient descent with a dev-EER plateau schedule, plus the two
// expert trainers: full fine-tuning of the shared expert and LoRA training of
// attack-specific experts.

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "amulet/dataset.hpp"
#include "amulet/eval.hpp"
#include "amulet/experts.hpp"
#include "amulet/ops.hpp"

namespace amulet::training {

struct TrainHyper {
  double lr = 1e-4;
  double lr_factor = 0.5;
  int plateau_epochs = 3;
  double lr_floor = 1e-7;
  int patience = 10;
  int max_epochs = 100;
  std::size_t batch_size = 16;
  std::uint64_t seed = 1;

  void validate() const {
    if (!(lr > 0.0) || !(lr_floor > 0.0)) throw InputError("train: learning rates must be positive");
    if (!(lr_factor > 0.0 && lr_factor < 1.0)) throw InputError("train: lr_factor must be in (0, 1)");
    if (plateau_epochs < 1 || patience < 1 || max_epochs < 1) throw InputError("train: epoch counts must be >= 1");
    if (batch_size < 1) throw InputError("train: batch_size must be >= 1");
  }
};

inline nlohmann::json to_json(const TrainHyper& h) {
  return {{"lr", h.lr},           {"lr_factor", h.lr_factor},   {"plateau_epochs", h.plateau_epochs},
          {"lr_floor", h.lr_floor}, {"patience", h.patience},     {"max_epochs", h.max_epochs},
          {"batch_size", h.batch_size}, {"seed", h.seed}};
}

inline TrainHyper train_hyper_from_json(const nlohmann::json& j, TrainHyper h = {}) {
  h.lr = j.value("lr", h.lr);
  h.lr_factor = j.value("lr_factor", h.lr_factor);
  h.plateau_epochs = j.value("plateau_epochs", h.plateau_epochs);
  h.lr_floor = j.value("lr_floor", h.lr_floor);
  h.patience = j.value("patience", h.patience);
  h.max_epochs = j.value("max_epochs", h.max_epochs);
  h.batch_size = j.value("batch_size", h.batch_size);
  h.seed = j.value("seed", h.seed);
  h.validate();
  return h;
}

struct EpochLog {
  int epoch = 0;
  double loss = 0.0;      // mean training batch loss
  double dev_eer = 0.0;   // fraction
  double dev_loss = 0.0;
  double lr = 0.0;
  bool best = false;
};

inline std::string to_log_line(const std::string& stage, const EpochLog& e) {
  nlohmann::json j = {{"stage", stage}, {"epoch", e.epoch},     {"loss", e.loss},
                      {"dev_eer", e.dev_eer}, {"dev_loss", e.dev_loss}, {"lr", e.lr}, {"best", e.best}};
  return j.dump();
}

using EpochLogger = std::function<void(const EpochLog&)>;

struct TrainResult {
  std::vector<EpochLog> history;
  int best_epoch = -1;
  double best_dev_eer = 1.0;
  double best_dev_loss = std::numeric_limits<double>::infinity();
};

struct DevMetrics {
  double eer = 0.0;
  double loss = 0.0;
};

/// Generic loop. `step(batch, lr)` runs one update and returns the batch
/// loss; `dev()` scores the dev set; `snapshot()` stores the current best.
/// LR is multiplied by lr_factor after `plateau_epochs` epochs without a
/// dev-EER improvement and training stops after `patience` such epochs.
/// The kept model has the lowest dev EER, ties going to lower dev loss.
template <typename Step, typename Dev, typename Snapshot>
TrainResult run_training(const TrainHyper& h, std::size_t n_train, Step&& step, Dev&& dev, Snapshot&& snapshot,
                         const EpochLogger& log = {}) {
  h.validate();
  if (n_train == 0) throw InputError("train: empty training set");
  TrainResult res;
  std::mt19937_64 shuffle_rng(derive_seed(h.seed, "shuffle"));
  std::vector<std::size_t> order(n_train);
  double lr = h.lr;
  int since_best = 0, since_decay = 0;
  double best_eer_seen = std::numeric_limits<double>::infinity();
  for (int epoch = 0; epoch < h.max_epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t s = 0; s < n_train; s += h.batch_size) {
      const std::size_t e = std::min(n_train, s + h.batch_size);
      double loss;
      try {
        loss = step(std::span<const std::size_t>(order.data() + s, e - s), lr);
      } catch (const NonFiniteError& err) {
        throw NonFiniteError(std::string(err.what()) + " (epoch " + std::to_string(epoch) + ", batch " +
                             std::to_string(batches) + ", lr " + std::to_string(lr) + ")");
      }
      if (!std::isfinite(loss)) {
        throw NonFiniteError("non-finite training loss at epoch " + std::to_string(epoch) + ", batch " +
                             std::to_string(batches));
      }
      loss_sum += loss;
      ++batches;
    }
    const DevMetrics d = dev();
    EpochLog entry{epoch, loss_sum / static_cast<double>(batches), d.eer, d.loss, lr, false};
    if (d.eer < res.best_dev_eer || (d.eer == res.best_dev_eer && d.loss < res.best_dev_loss) || res.best_epoch < 0) {
      res.best_dev_eer = d.eer;
      res.best_dev_loss = d.loss;
      res.best_epoch = epoch;
      entry.best = true;
      snapshot();
    }
    if (d.eer < best_eer_seen) {
      best_eer_seen = d.eer;
      since_best = 0;
      since_decay = 0;
    } else {
      ++since_best;
      if (++since_decay >= h.plateau_epochs) {
        lr = std::max(h.lr_floor, lr * h.lr_factor);
        since_decay = 0;
      }
    }
    res.history.push_back(entry);
    if (log) log(entry);
    if (since_best >= h.patience) break;
  }
  return res;
}

// ---------------------------------------------------------------- datasets

/// Framed features and class indices for one split, loaded once.
struct LabeledSet {
  std::vector<Tensor2> features;
  std::vector<int> labels;
  std::vector<std::string> ids;
  std::size_t size() const { return features.size(); }
};

inline LabeledSet load_set(const dataset::Manifest& m, dataset::Split split, const experts::EncoderConfig& cfg,
                           int jobs = 1) {
  std::vector<const dataset::ManifestEntry*> items;
  for (const auto& e : m.entries)
    if (e.split == split) items.push_back(&e);
  LabeledSet s;
  s.features.resize(items.size());
  dataset::parallel_for(items.size(), jobs, [&](std::size_t i) {
    s.features[i] = experts::frame_features(dataset::load_clip(m, *items[i]), cfg);
  });
  for (const auto* e : items) {
    s.labels.push_back(class_index(e->label));
    s.ids.push_back(e->clip_id);
  }
  return s;
}

/// Rows of every selected clip stacked into one matrix.
inline Tensor2 stack_rows(const std::vector<Tensor2>& feats, std::span<const std::size_t> idx) {
  const std::size_t T = feats[idx[0]].rows(), F = feats[idx[0]].cols();
  Tensor2 out(T * idx.size(), F);
  for (std::size_t k = 0; k < idx.size(); ++k) {
    const Tensor2& f = feats[idx[k]];
    if (f.rows() != T || f.cols() != F) throw InputError("training batches need equal-length clips");
    std::copy(f.data().begin(), f.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(k * T * F));
  }
  return out;
}

inline void sgd_update(std::vector<experts::Parameter*>& params, const std::vector<ag::Var>& vars, double lr) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Tensor2& g = vars[i].node().grad;
    auto& v = params[i]->value.data();
    for (std::size_t j = 0; j < v.size(); ++j) v[j] -= lr * g[j];
  }
}

/// Scores and mean cross-entropy of a model over a labelled set.
inline DevMetrics expert_dev_metrics(const experts::ExpertModel& m, const LabeledSet& dev, int jobs = 1) {
  std::vector<std::vector<double>> logits(dev.size());
  dataset::parallel_for(dev.size(), jobs, [&](std::size_t i) {
    logits[i] = experts::head_logits(m, experts::encoder_forward(m, dev.features[i]));
  });
  eval::ScoreSet s;
  double loss = 0.0;
  for (std::size_t i = 0; i < dev.size(); ++i) {
    (dev.labels[i] == 0 ? s.bona_scores : s.spoof_scores).push_back(experts::logit_score(logits[i]));
    loss += amulet::cross_entropy(logits[i], dev.labels[i]);
  }
  return {eval::compute_eer(s).eer, loss / static_cast<double>(dev.size())};
}

// ---------------------------------------------------------------- frozen contract

inline std::map<std::string, std::uint64_t> frozen_checksums(const experts::ExpertModel& m) {
  std::map<std::string, std::uint64_t> out;
  for (const auto* p : m.tensors())
    if (p->frozen) out[p->name] = checksum(p->value);
  return out;
}

inline void verify_frozen(const experts::ExpertModel& m, const std::map<std::string, std::uint64_t>& before) {
  const auto now = frozen_checksums(m);
  for (const auto& [name, sum] : before) {
    auto it = now.find(name);
    if (it == now.end() || it->second != sum) {
      throw FrozenContractError("frozen tensor '" + name + "' of model '" + m.name + "' changed during training");
    }
  }
}

/// Trains every non-frozen tensor of `model` in place and returns the
/// history; `model` ends holding the best-dev snapshot.
inline TrainResult train_expert(experts::ExpertModel& model, const LabeledSet& train, const LabeledSet& dev,
                                const TrainHyper& h, const EpochLogger& log = {}, int jobs = 1) {
  if (train.size() == 0 || dev.size() == 0) throw InputError("train: train and dev sets must be non-empty");
  const auto frozen_before = frozen_checksums(model);
  std::mt19937_64 drop_rng(derive_seed(h.seed, "dropout"));
  experts::ExpertModel best = model;
  std::vector<int> labels;

  auto step = [&](std::span<const std::size_t> idx, double lr) {
    const experts::Bound g = experts::bind(model, true);
    const ag::Var x = ag::Var::constant(stack_rows(train.features, idx));
    const ag::Var z = experts::encoder_graph(model, g, x, &drop_rng);
    const ag::Var logits = experts::head_graph(g, z, idx.size());
    labels.clear();
    for (auto i : idx) labels.push_back(train.labels[i]);
    const ag::Var loss = ag::cross_entropy(logits, labels);
    ag::backward(loss);

    std::vector<experts::Parameter*> params;
    std::vector<ag::Var> vars;
    std::size_t l = 0;
    for (auto& layer : model.layers) {
      params.push_back(&layer.W), vars.push_back(g.W[l]);
      params.push_back(&layer.b), vars.push_back(g.b[l]);
      if (layer.adapter) {
        params.push_back(&layer.adapter->A), vars.push_back(g.A[l]);
        params.push_back(&layer.adapter->B), vars.push_back(g.B[l]);
      }
      ++l;
    }
    params.push_back(&model.head_W), vars.push_back(g.head_W);
    params.push_back(&model.head_b), vars.push_back(g.head_b);
    std::vector<experts::Parameter*> live;
    std::vector<ag::Var> live_vars;
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (!params[i]->frozen) {
        live.push_back(params[i]);
        live_vars.push_back(vars[i]);
      }
    }
    sgd_update(live, live_vars, lr);
    return loss.item();
  };
  auto dev_fn = [&] { return expert_dev_metrics(model, dev, jobs); };
  auto snap = [&] { best = model; };

  TrainResult r = run_training(h, train.size(), step, dev_fn, snap, log);
  model = std::move(best);
  verify_frozen(model, frozen_before);
  return r;
}

/// Full fine-tuning of the shared expert from a fresh initialisation.
inline experts::ExpertModel train_shared(const experts::EncoderConfig& cfg, const LabeledSet& train,
                                         const LabeledSet& dev, const TrainHyper& h, TrainResult* result = nullptr,
                                         const EpochLogger& log = {}, const experts::InitConfig& init = {}, int jobs = 1) {
  experts::ExpertModel m = experts::init_model(cfg, h.seed, "E0", init);
  TrainResult r = train_expert(m, train, dev, h, log, jobs);
  if (result) *result = std::move(r);
  return m;
}

/// LoRA adaptation of a copy of `e0`; only adapters and the expert's head move.
inline experts::ExpertModel train_ase(const experts::ExpertModel& e0, const std::string& name,
                                      const experts::LoraHyper& lora, const LabeledSet& train, const LabeledSet& dev,
                                      const TrainHyper& h, TrainResult* result = nullptr, const EpochLogger& log = {},
                                      int jobs = 1) {
  experts::ExpertModel m = experts::lora_inject(e0, lora, derive_seed(h.seed, name), name);
  TrainResult r = train_expert(m, train, dev, h, log, jobs);
  if (experts::base_checksum(m) != experts::base_checksum(e0)) {
    throw FrozenContractError("base encoder of '" + name + "' diverged from the shared expert");
  }
  if (result) *result = std::move(r);
  return m;
}

}  // namespace amulet::training
