// Copyright 2026 The AMULET-Desk Authors
// SPDX-License-Identifier: Apache-2.0
//
// Synthetic bona fide / spoof corpus, JSON Lines manifests, attacked-variant
// construction, fusion-subset sampling and WAV directory ingestion.

#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <numbers>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "amulet/attacks.hpp"
#include "amulet/audio.hpp"
#include "amulet/errors.hpp"
#include "amulet/hashing.hpp"
#include "amulet/wav.hpp"

namespace amulet::dataset {

namespace fs = std::filesystem;

enum class Split { train, dev, eval };

inline const char* split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::dev: return "dev";
    case Split::eval: return "eval";
  }
  return "?";
}

inline Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "dev") return Split::dev;
  if (s == "eval") return Split::eval;
  throw InputError("unknown split '" + s + "'");
}

// ---------------------------------------------------------------- synthesis

struct SynthConfig {
  int n_train = 400;  // per class
  int n_dev = 80;
  int n_eval = 100;
  double clip_seconds = 2.0;
  int sample_rate = 16000;
  double artifact_strength = 1.0;  // 0 = spoof identical to bona fide
  int harmonics_min = 3;
  int harmonics_max = 8;
  double noise_floor_db = -40.0;
  double reset_period_ms = 25.0;  // spoof phase-reset / envelope-quantization period
  int quant_levels = 4;
  double f0_min = 80.0;
  double f0_max = 125.0;
  double harmonic_rolloff = 1.0;  // harmonic h has amplitude ~ U[0.3, 1] / h^rolloff
  double level_min = 0.08;        // clip RMS range
  double level_max = 0.12;
  double waveform_quant_mix = 0.3;  // weight of the per-period 4-level waveform quantization error in spoofs
  double imaging_cutoff_hz = 4000.0;   // > 0: the quantization error is high-passed here (imaging band)
  double tone_level_db = -46.0;    // upsampling tone relative to the clip RMS; <= -120 disables
  int tone_period = 8;              // samples per tone pattern repeat (fs / period and its 2nd harmonic)
  std::uint64_t seed = 1;

  void validate() const {
    std::string err;
    if (n_train <= 0 || n_dev <= 0 || n_eval <= 0) err += "synth counts must be > 0; ";
    if (!(clip_seconds >= 1.0 && clip_seconds <= 6.0)) err += "clip_seconds must lie in [1, 6]; ";
    if (sample_rate <= 0) err += "sample_rate must be > 0; ";
    if (harmonics_min < 1 || harmonics_max < harmonics_min) err += "harmonic count range invalid; ";
    if (!(artifact_strength >= 0.0 && artifact_strength <= 1.0)) err += "artifact_strength must lie in [0, 1]; ";
    if (quant_levels < 2) err += "quant_levels must be >= 2; ";
    if (!(reset_period_ms > 0.0)) err += "reset_period_ms must be > 0; ";
    if (!(waveform_quant_mix >= 0.0 && waveform_quant_mix <= 1.0)) err += "waveform_quant_mix must lie in [0, 1]; ";
    if (imaging_cutoff_hz < 0.0 || imaging_cutoff_hz >= sample_rate / 2.0) err += "imaging_cutoff_hz must lie in [0, fs/2); ";
    if (tone_period < 2) err += "tone_period must be >= 2; ";
    if (!(f0_min > 0.0 && f0_max >= f0_min)) err += "f0 range must satisfy 0 < min <= max; ";
    if (!(harmonic_rolloff >= 0.0)) err += "harmonic_rolloff must be >= 0; ";
    if (!(level_min > 0.0 && level_max >= level_min && level_max < 1.0)) err += "level range must satisfy 0 < min <= max < 1; ";
    if (!err.empty()) throw InputError("invalid synth config: " + err);
  }
};

inline nlohmann::json to_json(const SynthConfig& c) {
  return {{"n_train", c.n_train},
          {"n_dev", c.n_dev},
          {"n_eval", c.n_eval},
          {"clip_seconds", c.clip_seconds},
          {"sample_rate", c.sample_rate},
          {"artifact_strength", c.artifact_strength},
          {"harmonics_min", c.harmonics_min},
          {"harmonics_max", c.harmonics_max},
          {"noise_floor_db", c.noise_floor_db},
          {"reset_period_ms", c.reset_period_ms},
          {"quant_levels", c.quant_levels},
          {"f0_min", c.f0_min},
          {"f0_max", c.f0_max},
          {"harmonic_rolloff", c.harmonic_rolloff},
          {"level_min", c.level_min},
          {"level_max", c.level_max},
          {"waveform_quant_mix", c.waveform_quant_mix},
          {"imaging_cutoff_hz", c.imaging_cutoff_hz},
          {"tone_level_db", c.tone_level_db},
          {"tone_period", c.tone_period},
          {"seed", c.seed}};
}

inline SynthConfig synth_config_from_json(const nlohmann::json& j) {
  SynthConfig c;
  c.n_train = j.value("n_train", c.n_train);
  c.n_dev = j.value("n_dev", c.n_dev);
  c.n_eval = j.value("n_eval", c.n_eval);
  c.clip_seconds = j.value("clip_seconds", c.clip_seconds);
  c.sample_rate = j.value("sample_rate", c.sample_rate);
  c.artifact_strength = j.value("artifact_strength", c.artifact_strength);
  c.harmonics_min = j.value("harmonics_min", c.harmonics_min);
  c.harmonics_max = j.value("harmonics_max", c.harmonics_max);
  c.noise_floor_db = j.value("noise_floor_db", c.noise_floor_db);
  c.reset_period_ms = j.value("reset_period_ms", c.reset_period_ms);
  c.quant_levels = j.value("quant_levels", c.quant_levels);
  c.f0_min = j.value("f0_min", c.f0_min);
  c.f0_max = j.value("f0_max", c.f0_max);
  c.harmonic_rolloff = j.value("harmonic_rolloff", c.harmonic_rolloff);
  c.level_min = j.value("level_min", c.level_min);
  c.level_max = j.value("level_max", c.level_max);
  c.waveform_quant_mix = j.value("waveform_quant_mix", c.waveform_quant_mix);
  c.imaging_cutoff_hz = j.value("imaging_cutoff_hz", c.imaging_cutoff_hz);
  c.tone_level_db = j.value("tone_level_db", c.tone_level_db);
  c.tone_period = j.value("tone_period", c.tone_period);
  c.seed = j.value("seed", c.seed);
  return c;
}

/// Random draws behind one synthetic clip. Bona fide and spoof clips built
/// from the same seed share all of them.
struct SynthParams {
  double f0 = 0.0;
  std::vector<double> amp, phase;
  double vib_rate = 0.0, vib_depth = 0.0, vib_phase = 0.0;
  double env_rate[3] = {}, env_phase[3] = {};
  std::size_t period = 1;       // artifact period in samples
  std::size_t grid_offset = 0;  // first artifact boundary
  double level = 0.1;           // output RMS before the noise floor
};

inline SynthParams draw_synth_params(std::mt19937_64& rng, const SynthConfig& cfg) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  auto U = [&](double lo, double hi) { return lo + (hi - lo) * u01(rng); };
  const double two_pi = 2.0 * std::numbers::pi;
  SynthParams p;
  p.f0 = U(cfg.f0_min, cfg.f0_max);
  const int n_harm = std::uniform_int_distribution<int>(cfg.harmonics_min, cfg.harmonics_max)(rng);
  for (int h = 0; h < n_harm; ++h) {
    p.amp.push_back(U(0.3, 1.0) / std::pow(h + 1.0, cfg.harmonic_rolloff));
    p.phase.push_back(U(0.0, two_pi));
  }
  p.vib_rate = U(3.0, 6.0);
  p.vib_depth = U(0.0, 0.03);
  p.vib_phase = U(0.0, two_pi);
  for (int j = 0; j < 3; ++j) {
    p.env_rate[j] = U(0.5, 3.0);
    p.env_phase[j] = U(0.0, two_pi);
  }
  p.period = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(cfg.reset_period_ms * cfg.sample_rate / 1000.0)));
  p.grid_offset = static_cast<std::size_t>(U(0.0, static_cast<double>(p.period))) % p.period;
  p.level = U(cfg.level_min, cfg.level_max);
  return p;
}

inline std::size_t synth_length(const SynthConfig& cfg) {
  return static_cast<std::size_t>(std::llround(cfg.clip_seconds * cfg.sample_rate));
}

/// Sample indices where the spoof artifact grid places a period boundary.
inline std::vector<std::size_t> artifact_boundaries(std::uint64_t seed, const SynthConfig& cfg) {
  std::mt19937_64 rng(seed);
  const auto p = draw_synth_params(rng, cfg);
  std::vector<std::size_t> out;
  for (std::size_t b = p.grid_offset == 0 ? p.period : p.grid_offset; b < synth_length(cfg); b += p.period)
    out.push_back(b);
  return out;
}

/// Voiced-like harmonic signal with a smooth random envelope and a white
/// microphone noise floor. The spoof version of the same seed keeps every
/// random draw but quantizes the envelope per period and resets the
/// oscillator phases at every period boundary (a vocoder-frame surrogate).
inline AudioClip synth_clip(Label cls, std::uint64_t seed, const SynthConfig& cfg) {
  if (cls == Label::unlabeled) throw InputError("synth_clip: class must be bonafide or spoof");
  std::mt19937_64 rng(seed);
  const SynthParams p = draw_synth_params(rng, cfg);
  const double fs = cfg.sample_rate;
  const std::size_t n = synth_length(cfg);
  const double two_pi = 2.0 * std::numbers::pi;

  // Cumulative fundamental phase (with vibrato) and the smooth envelope.
  std::vector<double> cum(n), env(n);
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / fs;
    cum[i] = acc;
    acc += two_pi * p.f0 * (1.0 + p.vib_depth * std::sin(two_pi * p.vib_rate * t + p.vib_phase)) / fs;
    double e = 0.0;
    for (int j = 0; j < 3; ++j) e += std::sin(two_pi * p.env_rate[j] * t + p.env_phase[j]);
    env[i] = 0.55 + 0.45 * e / 3.0;
  }
  auto segment_start = [&](std::size_t i) {
    if (i < p.grid_offset) return std::size_t{0};
    return p.grid_offset + (i - p.grid_offset) / p.period * p.period;
  };

  auto render = [&](bool artifacts) {
    std::vector<double> x(n);
    std::size_t seg = n;  // current segment start, n = none yet
    double seg_env = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double base = cum[i];
      double e = env[i];
      if (artifacts) {
        const std::size_t start = segment_start(i);
        if (start != seg) {
          seg = start;
          const std::size_t stop = std::min(n, i < p.grid_offset ? p.grid_offset : start + p.period);
          double m = 0.0;
          for (std::size_t q = start; q < stop; ++q) m += env[q];
          m /= static_cast<double>(stop - start);
          seg_env = std::ceil(m * cfg.quant_levels) / cfg.quant_levels;
        }
        base -= cum[seg];
        e = seg_env;
      }
      double s = 0.0;
      for (std::size_t h = 0; h < p.amp.size(); ++h) s += p.amp[h] * std::sin(static_cast<double>(h + 1) * base + p.phase[h]);
      x[i] = e * s;
    }
    return x;
  };

  std::vector<double> x = render(false);
  if (cls == Label::spoof && cfg.artifact_strength > 0.0) {
    auto a = render(true);
    // Mid-rise quantization of each period to quant_levels steps of its own peak.
    if (cfg.waveform_quant_mix > 0.0) {
      std::vector<double> qerr(n, 0.0);
      for (std::size_t start = 0; start < n;) {
        const std::size_t stop = std::min(n, start < p.grid_offset ? p.grid_offset : start + p.period);
        double peak = 0.0;
        for (std::size_t q = start; q < stop; ++q) peak = std::max(peak, std::abs(a[q]));
        if (peak > 0.0) {
          const double step = 2.0 * peak / cfg.quant_levels;
          const double top = peak - 0.5 * step;
          for (std::size_t q = start; q < stop; ++q) {
            const double v = std::clamp((std::floor(a[q] / step) + 0.5) * step, -top, top);
            qerr[q] = cfg.waveform_quant_mix * (v - a[q]);
          }
        }
        start = stop;
      }
      if (cfg.imaging_cutoff_hz > 0.0) {
        qerr = attacks::convolve_same(
            qerr, attacks::design_fir({attacks::FilterKind::highpass, cfg.imaging_cutoff_hz, 0.0}, 101, cfg.sample_rate));
      }
      for (std::size_t i = 0; i < n; ++i) a[i] += qerr[i];
    }
    const double s = cfg.artifact_strength;
    for (std::size_t i = 0; i < n; ++i) x[i] = (1.0 - s) * x[i] + s * a[i];
    // Upsampling tone: a fixed period-tone_period pattern riding on the envelope.
    if (cfg.tone_level_db > -120.0) {
      const double w = two_pi / cfg.tone_period;
      std::vector<double> tone(n);
      for (std::size_t i = 0; i < n; ++i) {
        const double j = static_cast<double>(i % static_cast<std::size_t>(cfg.tone_period));
        tone[i] = env[i] * (std::cos(w * j) + 0.5 * std::cos(2.0 * w * j + 1.0));
      }
      const double rt = rms(tone);
      const double amp = rt > 0.0 ? s * std::pow(10.0, cfg.tone_level_db / 20.0) * rms(x) / rt : 0.0;
      for (std::size_t i = 0; i < n; ++i) x[i] += amp * tone[i];
    }
  }
  const double r = rms(x);
  const double g = r > 0.0 ? p.level / r : 0.0;
  std::normal_distribution<double> nd(0.0, 1.0);
  const double floor_amp = p.level * std::pow(10.0, cfg.noise_floor_db / 20.0);
  for (auto& v : x) v = v * g + floor_amp * nd(rng);

  AudioClip clip;
  clip.samples = std::move(x);
  clip.sample_rate = cfg.sample_rate;
  clip.label = cls;
  return clip;
}

// ---------------------------------------------------------------- manifests

struct ManifestEntry {
  std::string clip_id;
  std::string path;                        // relative to the manifest directory, or absolute
  std::optional<nlohmann::json> recipe;    // inline synthesis recipe when there is no file
  Label label = Label::bonafide;
  Split split = Split::train;
  std::string condition = "T0";
  std::uint64_t seed = 0;
  bool peak_normalized = false;

  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

struct Manifest {
  std::vector<ManifestEntry> entries;
  std::string base_dir;  // directory relative paths resolve against

  std::size_t count(Split s) const {
    return static_cast<std::size_t>(std::count_if(entries.begin(), entries.end(), [s](const auto& e) { return e.split == s; }));
  }
  std::size_t count(Split s, Label l) const {
    return static_cast<std::size_t>(
        std::count_if(entries.begin(), entries.end(), [s, l](const auto& e) { return e.split == s && e.label == l; }));
  }
  Manifest filter(Split s) const {
    Manifest m;
    m.base_dir = base_dir;
    for (const auto& e : entries)
      if (e.split == s) m.entries.push_back(e);
    return m;
  }

  void validate() const {
    std::map<std::string, Split> seen;
    for (const auto& e : entries) {
      if (e.label == Label::unlabeled) throw InputError("manifest entry " + e.clip_id + " has no label");
      if (!seen.emplace(e.clip_id, e.split).second) throw InputError("duplicate clip_id in manifest: " + e.clip_id);
    }
  }
};

inline nlohmann::json to_json(const ManifestEntry& e) {
  nlohmann::json j{{"clip_id", e.clip_id},
                   {"label", std::string(label_name(e.label))},
                   {"split", split_name(e.split)},
                   {"condition", e.condition},
                   {"seed", e.seed}};
  if (!e.path.empty()) j["path"] = e.path;
  if (e.recipe) j["recipe"] = *e.recipe;
  if (e.peak_normalized) j["peak_normalized"] = true;
  return j;
}

inline ManifestEntry entry_from_json(const nlohmann::json& j) {
  ManifestEntry e;
  e.clip_id = j.at("clip_id").get<std::string>();
  e.label = parse_label(j.at("label").get<std::string>());
  e.split = parse_split(j.at("split").get<std::string>());
  e.condition = j.value("condition", std::string("T0"));
  e.seed = j.value("seed", std::uint64_t{0});
  e.path = j.value("path", std::string());
  if (j.contains("recipe")) e.recipe = j.at("recipe");
  e.peak_normalized = j.value("peak_normalized", false);
  if (e.path.empty() && !e.recipe) throw InputError("manifest entry " + e.clip_id + " has neither path nor recipe");
  return e;
}

inline std::string serialize(const Manifest& m) {
  std::string out;
  for (const auto& e : m.entries) {
    out += to_json(e).dump();
    out += '\n';
  }
  return out;
}

inline Manifest parse_manifest(const std::string& text, std::string base_dir = ".") {
  Manifest m;
  m.base_dir = std::move(base_dir);
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      m.entries.push_back(entry_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& ex) {
      throw InputError("manifest line " + std::to_string(lineno) + ": " + ex.what());
    }
  }
  return m;
}

inline void save_manifest(const Manifest& m, const fs::path& path) {
  fs::create_directories(path.parent_path().empty() ? fs::path(".") : path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write manifest " + path.string());
  out << serialize(m);
}

inline Manifest load_manifest(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read manifest " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  auto dir = path.parent_path();
  return parse_manifest(ss.str(), dir.empty() ? "." : dir.string());
}

inline fs::path resolve(const Manifest& m, const ManifestEntry& e) {
  fs::path p(e.path);
  return p.is_absolute() ? p : fs::path(m.base_dir) / p;
}

inline AudioClip load_clip(const Manifest& m, const ManifestEntry& e) {
  AudioClip clip;
  if (!e.path.empty()) {
    const auto p = resolve(m, e);
    if (!fs::exists(p)) throw IoError("missing source file " + p.string() + " for clip " + e.clip_id);
    clip = wav::read(p.string());
  } else {
    const auto& r = *e.recipe;
    clip = synth_clip(parse_label(r.at("class").get<std::string>()), r.at("seed").get<std::uint64_t>(),
                      synth_config_from_json(r.at("synth")));
    wav::quantize_pcm16(clip);
  }
  clip.id = e.clip_id;
  clip.label = e.label;
  return clip;
}

/// Runs fn(i) for i in [0, n) on up to `jobs` threads. Each index is handled
/// exactly once, so per-item results are independent of the thread count.
template <typename Fn>
void parallel_for(std::size_t n, int jobs, Fn&& fn) {
  const auto workers = static_cast<std::size_t>(std::max(1, jobs));
  if (workers == 1 || n < 2) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr err;
  std::mutex err_mu;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < std::min(workers, n); ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(err_mu);
          if (!err) err = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (err) std::rethrow_exception(err);
}

inline std::string clip_id_for(Split s, Label l, int index) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_%s_%04d", split_name(s), l == Label::bonafide ? "bona" : "spoof", index);
  return buf;
}

/// Synthesizes the clean corpus. With out_dir non-empty, WAV files are
/// written under out_dir/<split>/ and entries reference them; otherwise
/// entries carry inline synthesis recipes.
inline Manifest build_corpus(const SynthConfig& cfg, const fs::path& out_dir, int jobs = 1) {
  cfg.validate();
  Manifest m;
  m.base_dir = out_dir.empty() ? "." : out_dir.string();
  for (Split s : {Split::train, Split::dev, Split::eval}) {
    const int count = s == Split::train ? cfg.n_train : s == Split::dev ? cfg.n_dev : cfg.n_eval;
    for (int i = 0; i < count; ++i) {
      for (Label l : {Label::bonafide, Label::spoof}) {
        ManifestEntry e;
        e.clip_id = clip_id_for(s, l, i);
        e.label = l;
        e.split = s;
        e.condition = "T0";
        e.seed = derive_seed(cfg.seed, e.clip_id);
        if (out_dir.empty()) {
          e.recipe = nlohmann::json{{"class", std::string(label_name(l))}, {"seed", e.seed}, {"synth", to_json(cfg)}};
        } else {
          e.path = std::string(split_name(s)) + "/" + e.clip_id + ".wav";
        }
        m.entries.push_back(std::move(e));
      }
    }
  }
  if (!out_dir.empty()) {
    for (Split s : {Split::train, Split::dev, Split::eval}) fs::create_directories(out_dir / split_name(s));
    parallel_for(m.entries.size(), jobs, [&](std::size_t i) {
      const auto& e = m.entries[i];
      AudioClip clip = synth_clip(e.label, e.seed, cfg);
      wav::write((out_dir / e.path).string(), clip);
    });
  }
  return m;
}

/// Applies `spec` to every clip of `manifest`, writing WAVs under out_dir.
/// Ids, labels, splits and order are preserved; the condition becomes `tag`.
/// When given, `eval_spec` replaces `spec` on the eval split.
inline Manifest build_variant(const Manifest& manifest, const attacks::AttackSpec& spec, const std::string& tag,
                              const fs::path& out_dir, int jobs = 1, const attacks::AttackSpec* eval_spec = nullptr) {
  attacks::validate(spec);
  if (eval_spec) attacks::validate(*eval_spec);
  Manifest out;
  out.base_dir = out_dir.string();
  out.entries = manifest.entries;
  for (auto& e : out.entries) {
    e.condition = tag;
    e.recipe.reset();
    e.path = std::string(split_name(e.split)) + "/" + e.clip_id + ".wav";
  }
  for (Split s : {Split::train, Split::dev, Split::eval}) {
    if (manifest.count(s) > 0) fs::create_directories(out_dir / split_name(s));
  }
  parallel_for(manifest.entries.size(), jobs, [&](std::size_t i) {
    const AudioClip src = load_clip(manifest, manifest.entries[i]);
    const bool ev = eval_spec && manifest.entries[i].split == Split::eval;
    auto res = attacks::run_attack(src, ev ? *eval_spec : spec);
    out.entries[i].peak_normalized = res.peak_normalized;
    wav::write((out_dir / out.entries[i].path).string(), res.clip);
  });
  return out;
}

/// Per source manifest, draws floor(fraction * n_train) training entries
/// without replacement. Ids become "<condition>/<clip_id>" and paths are
/// rewritten relative to `base_dir`.
inline Manifest sample_fusion_subset(const std::vector<Manifest>& sources, double fraction, std::uint64_t seed,
                                     const fs::path& base_dir = ".") {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw InputError("sample_fusion_subset: fraction must lie in (0, 1]");
  if (sources.empty()) throw InputError("sample_fusion_subset: no source manifests");
  Manifest out;
  out.base_dir = base_dir.string();
  for (std::size_t si = 0; si < sources.size(); ++si) {
    const auto& src = sources[si];
    std::vector<std::size_t> train_idx;
    for (std::size_t i = 0; i < src.entries.size(); ++i)
      if (src.entries[i].split == Split::train) train_idx.push_back(i);
    if (train_idx.empty()) throw InputError("sample_fusion_subset: source manifest " + std::to_string(si) + " has no training entries");
    const auto take = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(train_idx.size()) + 1e-9));
    std::mt19937_64 rng(derive_seed(seed, si, "fusion_subset"));
    std::shuffle(train_idx.begin(), train_idx.end(), rng);
    train_idx.resize(take);
    std::sort(train_idx.begin(), train_idx.end());
    for (std::size_t i : train_idx) {
      ManifestEntry e = src.entries[i];
      e.clip_id = e.condition + "/" + e.clip_id;
      if (!e.path.empty()) {
        const auto abs = fs::absolute(resolve(src, src.entries[i])).lexically_normal();
        e.path = abs.lexically_relative(fs::absolute(base_dir).lexically_normal()).generic_string();
      }
      out.entries.push_back(std::move(e));
    }
  }
  return out;
}

/// Builds a manifest over the PCM 16-bit mono WAVs in `dir`. `labels_file`
/// has two whitespace-separated columns: file name and label.
inline Manifest ingest_wav_dir(const fs::path& dir, const fs::path& labels_file, bool allow_any_rate = false,
                               Split split = Split::eval, const std::string& condition = "T0") {
  std::ifstream lf(labels_file);
  if (!lf) throw IoError("cannot read labels file " + labels_file.string());
  std::map<std::string, Label> labels;
  std::string line;
  while (std::getline(lf, line)) {
    std::istringstream ls(line);
    std::string name, lab;
    if (!(ls >> name)) continue;
    if (!(ls >> lab)) throw InputError("labels file: missing label for " + name);
    const Label l = parse_label(lab);
    if (l == Label::unlabeled) throw InputError("labels file: unknown label for " + name);
    labels[name] = l;
  }
  std::vector<fs::path> files;
  for (const auto& de : fs::directory_iterator(dir)) {
    if (de.is_regular_file() && de.path().extension() == ".wav") files.push_back(de.path());
  }
  std::sort(files.begin(), files.end());
  Manifest m;
  m.base_dir = dir.string();
  for (const auto& f : files) {
    const auto name = f.filename().string();
    auto it = labels.find(name);
    if (it == labels.end()) it = labels.find(f.stem().string());
    if (it == labels.end()) throw InputError("WAV file " + name + " is missing from labels file " + labels_file.string());
    wav::WavInfo info;
    wav::read(f.string(), &info);
    if (!allow_any_rate && info.sample_rate != 16000) {
      throw InputError("WAV file " + name + " has sample rate " + std::to_string(info.sample_rate) +
                       " Hz; expected 16000 (use --allow-any-rate)");
    }
    ManifestEntry e;
    e.clip_id = f.stem().string();
    e.path = name;
    e.label = it->second;
    e.split = split;
    e.condition = condition;
    m.entries.push_back(std::move(e));
  }
  m.validate();
  return m;
}

}  // namespace amulet::dataset
