// Copyright 2026 The AMULET-Desk Authors
// SPDX-License-Identifier: Apache-2.0
//
// Expert models: a per-frame MLP encoder over raw-sample frames, a mean-pool
// linear head, and LoRA adapters on every encoder linear layer.

#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"

#include "amulet/audio.hpp"
#include "amulet/autograd.hpp"
#include "amulet/errors.hpp"
#include "amulet/hashing.hpp"
#include "amulet/tensor.hpp"

namespace amulet::experts {

struct EncoderConfig {
  std::size_t frame_len = 160;
  std::size_t hop = 160;
  std::vector<std::size_t> hidden{64, 64, 64};

  std::size_t feature_dim() const { return frame_len; }
  std::size_t out_dim() const { return hidden.back(); }

  void validate() const {
    if (frame_len < 2 || hop < 1) throw InputError("encoder: frame_len must be >= 2 and hop >= 1");
    if (hidden.empty()) throw InputError("encoder: at least one hidden layer is required");
    for (auto h : hidden)
      if (h < 2) throw InputError("encoder: hidden dims must be >= 2");
  }
};

inline nlohmann::json to_json(const EncoderConfig& c) {
  return {{"frame_len", c.frame_len}, {"hop", c.hop}, {"hidden", c.hidden}};
}

inline EncoderConfig encoder_config_from_json(const nlohmann::json& j) {
  EncoderConfig c;
  c.frame_len = j.value("frame_len", c.frame_len);
  c.hop = j.value("hop", c.hop);
  if (j.contains("hidden")) c.hidden = j.at("hidden").get<std::vector<std::size_t>>();
  c.validate();
  return c;
}

inline std::size_t frame_count(std::size_t n_samples, const EncoderConfig& cfg) {
  if (n_samples < cfg.frame_len) {
    throw DegenerateInputError("clip of " + std::to_string(n_samples) + " samples is shorter than one frame (" +
                               std::to_string(cfg.frame_len) + ")");
  }
  return (n_samples - cfg.frame_len) / cfg.hop + 1;
}

/// T x frame_len matrix of raw-sample frames, each with its mean removed.
inline Tensor2 frame_features(const AudioClip& clip, const EncoderConfig& cfg) {
  const std::size_t T = frame_count(clip.samples.size(), cfg);
  Tensor2 out(T, cfg.frame_len);
  for (std::size_t t = 0; t < T; ++t) {
    const double* src = clip.samples.data() + t * cfg.hop;
    double mean = 0.0;
    for (std::size_t i = 0; i < cfg.frame_len; ++i) mean += src[i];
    mean /= static_cast<double>(cfg.frame_len);
    for (std::size_t i = 0; i < cfg.frame_len; ++i) out(t, i) = src[i] - mean;
  }
  return out;
}

// ---------------------------------------------------------------- parameters

struct Parameter {
  std::string name;
  Tensor2 value;
  bool frozen = false;
};

enum class ScaleMode { alpha_over_r, alpha_literal };

inline const char* scale_mode_name(ScaleMode m) { return m == ScaleMode::alpha_over_r ? "alpha_over_r" : "alpha_literal"; }

inline ScaleMode parse_scale_mode(const std::string& s) {
  if (s == "alpha_over_r") return ScaleMode::alpha_over_r;
  if (s == "alpha_literal") return ScaleMode::alpha_literal;
  throw InputError("unknown LoRA scale mode '" + s + "' (expected alpha_over_r or alpha_literal)");
}

struct LoraAdapter {
  Parameter A;  // m x r
  Parameter B;  // r x n
  std::size_t rank = 1;
  double alpha = 1.0;
  double dropout_p = 0.0;
  ScaleMode mode = ScaleMode::alpha_over_r;

  double scale() const { return mode == ScaleMode::alpha_over_r ? alpha / static_cast<double>(rank) : alpha; }

  void validate() const {
    if (rank < 1) throw InputError("LoRA rank must be >= 1");
    if (!(dropout_p >= 0.0 && dropout_p < 1.0)) throw InputError("LoRA dropout must be in [0, 1)");
    if (A.value.cols() != rank || B.value.rows() != rank) throw ShapeError("LoRA factors do not match rank");
  }
};

struct LinearLayer {
  Parameter W;  // in x out
  Parameter b;  // 1 x out
  std::optional<LoraAdapter> adapter;
};

struct ExpertModel {
  std::string name;
  EncoderConfig cfg;
  std::vector<LinearLayer> layers;
  Parameter head_W;  // D x 2
  Parameter head_b;  // 1 x 2

  bool has_adapters() const {
    for (const auto& l : layers)
      if (l.adapter) return true;
    return false;
  }

  /// Every tensor, encoder first, then adapters, then the head.
  std::vector<Parameter*> tensors() {
    std::vector<Parameter*> out;
    for (auto& l : layers) {
      out.push_back(&l.W);
      out.push_back(&l.b);
    }
    for (auto& l : layers) {
      if (l.adapter) {
        out.push_back(&l.adapter->A);
        out.push_back(&l.adapter->B);
      }
    }
    out.push_back(&head_W);
    out.push_back(&head_b);
    return out;
  }
  std::vector<const Parameter*> tensors() const {
    std::vector<const Parameter*> out;
    for (auto* p : const_cast<ExpertModel*>(this)->tensors()) out.push_back(p);
    return out;
  }
};

inline Tensor2 normal_tensor(std::size_t r, std::size_t c, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> nd(0.0, stddev);
  Tensor2 t(r, c);
  for (auto& v : t.data()) v = nd(rng);
  return t;
}

struct InitConfig {
  double gain = 1.0;            // encoder weights ~ N(0, gain^2 / fan_in)
  double bias_std = 0.5;        // encoder biases ~ N(0, bias_std^2)
  double filterbank_gain = 20;  // > 0: first layer starts as a Hann-windowed cosine/sine bank
};

inline nlohmann::json to_json(const InitConfig& c) {
  return {{"gain", c.gain}, {"bias_std", c.bias_std}, {"filterbank_gain", c.filterbank_gain}};
}

inline InitConfig init_config_from_json(const nlohmann::json& j) {
  InitConfig c;
  c.gain = j.value("gain", c.gain);
  c.bias_std = j.value("bias_std", c.bias_std);
  c.filterbank_gain = j.value("filterbank_gain", c.filterbank_gain);
  if (!(c.gain > 0.0) || !(c.bias_std >= 0.0) || !(c.filterbank_gain >= 0.0)) {
    throw InputError("init: gain must be > 0, bias_std and filterbank_gain >= 0");
  }
  return c;
}

/// in x out bank: column j is a Hann-windowed cosine (even j) or sine (odd j)
/// at frequency (floor(j/2) + 0.5) / ceil(out/2) * Nyquist.
inline Tensor2 filterbank_weights(std::size_t in, std::size_t out, double gain) {
  Tensor2 W(in, out);
  const double two_pi = 2.0 * std::numbers::pi;
  const double pairs = static_cast<double>((out + 1) / 2);
  for (std::size_t j = 0; j < out; ++j) {
    const double f = (static_cast<double>(j / 2) + 0.5) / pairs * 0.5;  // cycles per sample
    const double phase = j % 2 == 0 ? 0.0 : std::numbers::pi / 2.0;
    for (std::size_t n = 0; n < in; ++n) {
      const double win = in > 1 ? 0.5 - 0.5 * std::cos(two_pi * static_cast<double>(n) / static_cast<double>(in - 1)) : 1.0;
      W(n, j) = gain * win * std::cos(two_pi * f * static_cast<double>(n) + phase);
    }
  }
  return W;
}

/// Fresh, fully trainable model.
inline ExpertModel init_model(const EncoderConfig& cfg, std::uint64_t seed, const std::string& name = "E0",
                              const InitConfig& init = {}) {
  cfg.validate();
  std::mt19937_64 rng(derive_seed(seed, "init_model"));
  ExpertModel m;
  m.name = name;
  m.cfg = cfg;
  std::size_t in = cfg.feature_dim();
  for (std::size_t l = 0; l < cfg.hidden.size(); ++l) {
    const std::size_t out = cfg.hidden[l];
    LinearLayer layer;
    Tensor2 W = normal_tensor(in, out, init.gain / std::sqrt(double(in)), rng);
    if (l == 0 && init.filterbank_gain > 0.0) W = filterbank_weights(in, out, init.filterbank_gain);
    layer.W = {"enc" + std::to_string(l) + ".W", std::move(W), false};
    layer.b = {"enc" + std::to_string(l) + ".b", normal_tensor(1, out, init.bias_std, rng), false};
    m.layers.push_back(std::move(layer));
    in = out;
  }
  m.head_W = {"head.W", normal_tensor(in, 2, 1.0 / std::sqrt(double(in)), rng), false};
  m.head_b = {"head.b", Tensor2(1, 2), false};
  return m;
}

/// W0 + s * (A * B).
inline Tensor2 lora_merged_weight(const Tensor2& W0, const LoraAdapter& ad) {
  if (ad.A.value.rows() != W0.rows() || ad.B.value.cols() != W0.cols() || ad.A.value.cols() != ad.B.value.rows()) {
    throw ShapeError("lora_merged_weight: W0 " + W0.shape_str() + " vs A " + ad.A.value.shape_str() + ", B " +
                     ad.B.value.shape_str());
  }
  Tensor2 delta = matmul(ad.A.value, ad.B.value);
  Tensor2 out = W0;
  const double s = ad.scale();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += s * delta[i];
  return out;
}

struct LoraHyper {
  std::size_t rank = 4;
  double alpha = 16.0;
  double dropout_p = 0.1;
  ScaleMode mode = ScaleMode::alpha_over_r;
};

inline nlohmann::json to_json(const LoraHyper& h) {
  return {{"rank", h.rank}, {"alpha", h.alpha}, {"dropout", h.dropout_p}, {"scale_mode", scale_mode_name(h.mode)}};
}

/// Copies `base`, freezes every base tensor and attaches A ~ N(0, 0.02^2),
/// B = 0 adapters to each encoder layer. The head stays trainable.
inline ExpertModel lora_inject(const ExpertModel& base, const LoraHyper& h, std::uint64_t seed,
                               const std::string& name) {
  if (base.has_adapters()) throw InputError("lora_inject: model '" + base.name + "' already has adapters");
  ExpertModel m = base;
  m.name = name;
  std::mt19937_64 rng(derive_seed(seed, "lora_inject"));
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    auto& layer = m.layers[l];
    layer.W.frozen = true;
    layer.b.frozen = true;
    LoraAdapter ad;
    ad.rank = h.rank;
    ad.alpha = h.alpha;
    ad.dropout_p = h.dropout_p;
    ad.mode = h.mode;
    const std::string p = "enc" + std::to_string(l);
    ad.A = {p + ".lora_A", normal_tensor(layer.W.value.rows(), h.rank, 0.02, rng), false};
    ad.B = {p + ".lora_B", Tensor2(h.rank, layer.W.value.cols()), false};
    ad.validate();
    layer.adapter = std::move(ad);
  }
  m.head_W.frozen = false;
  m.head_b.frozen = false;
  return m;
}

inline void freeze_all(ExpertModel& m) {
  for (auto* p : m.tensors()) p->frozen = true;
}

struct ParamCount {
  std::size_t trainable = 0;
  std::size_t total = 0;
  double percent = 0.0;
};

/// Trainable encoder tensors (adapters included) against the base encoder
/// size (layer weights and biases). Heads are not counted.
inline ParamCount count_trainable(const ExpertModel& m) {
  ParamCount c;
  for (const auto& l : m.layers) {
    c.total += l.W.value.size() + l.b.value.size();
    if (!l.W.frozen) c.trainable += l.W.value.size();
    if (!l.b.frozen) c.trainable += l.b.value.size();
    if (l.adapter) {
      if (!l.adapter->A.frozen) c.trainable += l.adapter->A.value.size();
      if (!l.adapter->B.frozen) c.trainable += l.adapter->B.value.size();
    }
  }
  c.percent = c.total ? 100.0 * static_cast<double>(c.trainable) / static_cast<double>(c.total) : 0.0;
  return c;
}

/// Content checksum over every tensor name and value.
inline std::uint64_t model_checksum(const ExpertModel& m) {
  Fnv1a h;
  for (const auto* p : m.tensors()) h.update(p->name).update(p->value);
  return h.digest();
}

/// Checksum of the tensors an ASE binds to: the base encoder layers.
inline std::uint64_t base_checksum(const ExpertModel& m) {
  Fnv1a h;
  for (const auto& l : m.layers) h.update(l.W.name).update(l.W.value).update(l.b.name).update(l.b.value);
  return h.digest();
}

// ---------------------------------------------------------------- forward

/// Graph handles for one forward pass. Frozen tensors enter as constants.
struct Bound {
  std::vector<ag::Var> W, b, A, B;
  ag::Var head_W, head_b;
};

inline ag::Var bind_param(const Parameter& p, bool track) {
  return track && !p.frozen ? ag::Var::parameter(p.value) : ag::Var::constant(p.value);
}

inline Bound bind(const ExpertModel& m, bool track) {
  Bound g;
  for (const auto& l : m.layers) {
    g.W.push_back(bind_param(l.W, track));
    g.b.push_back(bind_param(l.b, track));
    if (l.adapter) {
      g.A.push_back(bind_param(l.adapter->A, track));
      g.B.push_back(bind_param(l.adapter->B, track));
    } else {
      g.A.emplace_back();
      g.B.emplace_back();
    }
  }
  g.head_W = bind_param(m.head_W, track);
  g.head_b = bind_param(m.head_b, track);
  return g;
}

/// Inverted-dropout mask (kept entries scaled by 1/(1-p)).
inline Tensor2 dropout_mask(std::size_t r, std::size_t c, double p, std::mt19937_64& rng) {
  Tensor2 mask(r, c);
  const double keep = 1.0 / (1.0 - p);
  for (auto& v : mask.data()) {
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    v = u < p ? 0.0 : keep;
  }
  return mask;
}

/// Encoder over stacked frames. With an adapter each layer computes
/// x*W0 + s*((drop(x)*A)*B) + b; dropout only when `rng` is given.
inline ag::Var encoder_graph(const ExpertModel& m, const Bound& g, const ag::Var& x, std::mt19937_64* rng = nullptr) {
  if (x.cols() != m.cfg.feature_dim()) {
    throw ShapeError("encoder: features have " + std::to_string(x.cols()) + " columns, expected " +
                     std::to_string(m.cfg.feature_dim()));
  }
  ag::Var h = x;
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    ag::Var pre = ag::matmul(h, g.W[l]);
    if (const auto& ad = m.layers[l].adapter) {
      ag::Var in = h;
      if (rng && ad->dropout_p > 0.0) in = ag::hadamard_const(h, dropout_mask(h.rows(), h.cols(), ad->dropout_p, *rng));
      pre = ag::add(pre, ag::scale(ag::matmul(ag::matmul(in, g.A[l]), g.B[l]), ad->scale()));
    }
    h = ag::tanh(ag::add_row(pre, g.b[l]));
  }
  return h;
}

/// Mean-pools each of `clips` equal row blocks and applies the linear head.
inline ag::Var head_graph(const Bound& g, const ag::Var& z, std::size_t clips) {
  return ag::add_row(ag::matmul(ag::segment_mean(z, clips), g.head_W), g.head_b);
}

inline Tensor2 encoder_forward(const ExpertModel& m, const Tensor2& features) {
  return encoder_graph(m, bind(m, false), ag::Var::constant(features)).value();
}

/// Forward with every adapter folded into its host weight.
inline Tensor2 encoder_forward_merged(const ExpertModel& m, const Tensor2& features) {
  ExpertModel merged = m;
  for (auto& l : merged.layers) {
    if (l.adapter) {
      l.W.value = lora_merged_weight(l.W.value, *l.adapter);
      l.adapter.reset();
    }
  }
  return encoder_forward(merged, features);
}

/// The expert's own 2-way logits for one clip's encoder output.
inline std::vector<double> head_logits(const ExpertModel& m, const Tensor2& z) {
  const Bound g = bind(m, false);
  const Tensor2 out = head_graph(g, ag::Var::constant(z), 1).value();
  return {out[0], out[1]};
}

inline std::vector<double> expert_logits(const ExpertModel& m, const AudioClip& clip) {
  return head_logits(m, encoder_forward(m, frame_features(clip, m.cfg)));
}

/// logit(bonafide) - logit(spoof).
inline double logit_score(const std::vector<double>& logits) { return logits[0] - logits[1]; }

inline double expert_score(const ExpertModel& m, const AudioClip& clip) { return logit_score(expert_logits(m, clip)); }

}  // namespace amulet::experts
