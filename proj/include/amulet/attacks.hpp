// Copyright 2026 The AMULET-Desk Authors
// SPDX-License-Identifier: Apache-2.0
//
// Seeded post-processing attack simulation: additive noise at a target SNR,
// colored noise, windowed-sinc FIR filtering, RawBoost-style convolutive /
// impulsive / stationary distortions, a companding codec surrogate, and a
// series/parallel composition grammar. Every operation is a pure function of
// (clip, spec); all randomness flows from the spec seed and the clip id.

#pragma once

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <mutex>
#include <numbers>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "amulet/audio.hpp"
#include "amulet/errors.hpp"
#include "amulet/hashing.hpp"

namespace amulet::attacks {

using Rng = std::mt19937_64;
using Signal = std::vector<double>;

// ---------------------------------------------------------------- noise / SNR

/// 10*log10(P_signal / P_noise).
inline double measure_snr(const Signal& signal, const Signal& noise) {
  if (signal.size() != noise.size()) throw ShapeError("measure_snr: signal and noise lengths differ");
  const double ps = mean_power(signal);
  const double pn = mean_power(noise);
  if (!(ps > 0.0)) throw DegenerateInputError("measure_snr: signal power is zero");
  if (!(pn > 0.0)) throw DegenerateInputError("measure_snr: noise power is zero (SNR = +inf)");
  return 10.0 * std::log10(ps / pn);
}

/// Gain that places `noise` at `target_snr_db` below `signal`.
inline double snr_gain(const Signal& signal, const Signal& noise, double target_snr_db) {
  const double ps = mean_power(signal);
  const double pn = mean_power(noise);
  if (!(ps > 0.0)) throw DegenerateInputError("add_noise_at_snr: silent clip");
  if (!(pn > 0.0)) throw DegenerateInputError("add_noise_at_snr: noise has zero power");
  return std::sqrt(ps / (pn * std::pow(10.0, target_snr_db / 10.0)));
}

inline AudioClip add_noise_at_snr(const AudioClip& clip, const Signal& noise, double target_snr_db) {
  if (noise.size() != clip.size()) throw ShapeError("add_noise_at_snr: noise length differs from clip");
  if (!(target_snr_db >= -10.0 && target_snr_db <= 60.0)) {
    throw InputError("add_noise_at_snr: target SNR must lie in [-10, 60] dB");
  }
  const double g = snr_gain(clip.samples, noise, target_snr_db);
  AudioClip out = clip;
  for (std::size_t i = 0; i < out.size(); ++i) out.samples[i] += g * noise[i];
  return out;
}

enum class NoiseColor { white, pink, brown };

inline NoiseColor parse_color(const std::string& s) {
  if (s == "white") return NoiseColor::white;
  if (s == "pink") return NoiseColor::pink;
  if (s == "brown") return NoiseColor::brown;
  throw InputError("unknown noise color '" + s + "' (expected white, pink or brown)");
}

namespace detail {

inline std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

// Multiplies the spectrum of x by bin_gain(k) for k in [0, n/2].
template <typename Gain>
Signal shape_spectrum(const Signal& x, Gain bin_gain) {
  const int n = static_cast<int>(x.size());
  const int nb = n / 2 + 1;
  std::vector<double> in(x);
  fftw_complex* spec = fftw_alloc_complex(static_cast<std::size_t>(nb));
  Signal out(x.size());
  fftw_plan fwd, inv;
  {
    std::lock_guard lock(fftw_planner_mutex());
    fwd = fftw_plan_dft_r2c_1d(n, in.data(), spec, FFTW_ESTIMATE);
    inv = fftw_plan_dft_c2r_1d(n, spec, out.data(), FFTW_ESTIMATE);
  }
  fftw_execute(fwd);
  for (int k = 0; k < nb; ++k) {
    const double g = bin_gain(k);
    spec[k][0] *= g;
    spec[k][1] *= g;
  }
  fftw_execute(inv);
  {
    std::lock_guard lock(fftw_planner_mutex());
    fftw_destroy_plan(fwd);
    fftw_destroy_plan(inv);
  }
  fftw_free(spec);
  for (auto& v : out) v /= static_cast<double>(n);
  return out;
}

inline void normalize_unit_power(Signal& x) {
  const double p = mean_power(x);
  if (p > 0.0) {
    const double s = 1.0 / std::sqrt(p);
    for (auto& v : x) v *= s;
  }
}

}  // namespace detail

/// White: i.i.d. N(0,1). Pink/brown: white noise with power shaped by 1/f and
/// 1/f^2 in the frequency domain, normalized to unit power.
inline Signal gen_noise(NoiseColor color, std::size_t length, Rng& rng) {
  if (length == 0) throw InputError("gen_noise: length must be positive");
  std::normal_distribution<double> nd(0.0, 1.0);
  Signal w(length);
  for (auto& v : w) v = nd(rng);
  if (color == NoiseColor::white) return w;
  const double exponent = color == NoiseColor::pink ? 1.0 : 2.0;
  Signal out = detail::shape_spectrum(w, [exponent](int k) {
    return k == 0 ? 0.0 : std::pow(static_cast<double>(k), -exponent / 2.0);
  });
  detail::normalize_unit_power(out);
  return out;
}

// ---------------------------------------------------------------- FIR filters

enum class FilterKind { lowpass, highpass, bandpass };

inline FilterKind parse_filter_kind(const std::string& s) {
  if (s == "lowpass") return FilterKind::lowpass;
  if (s == "highpass") return FilterKind::highpass;
  if (s == "bandpass") return FilterKind::bandpass;
  throw InputError("unknown filter kind '" + s + "' (expected lowpass, highpass or bandpass)");
}

inline double hamming(int n, int taps) {
  return 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * n / (taps - 1));
}

/// Hamming-windowed sinc lowpass with unit DC gain.
inline Signal design_lowpass(double cutoff_hz, int taps, int sample_rate) {
  const double fc = cutoff_hz / sample_rate;
  const int m = (taps - 1) / 2;
  Signal h(static_cast<std::size_t>(taps));
  double sum = 0.0;
  for (int n = 0; n < taps; ++n) {
    const int k = n - m;
    const double s = k == 0 ? 2.0 * fc : std::sin(2.0 * std::numbers::pi * fc * k) / (std::numbers::pi * k);
    h[n] = s * hamming(n, taps);
    sum += h[n];
  }
  for (auto& v : h) v /= sum;
  return h;
}

struct FilterBand {
  FilterKind kind = FilterKind::lowpass;
  double f1 = 0.0;  // cutoff (lowpass/highpass) or lower edge (bandpass)
  double f2 = 0.0;  // upper edge, bandpass only
};

inline void validate_filter(const FilterBand& b, int taps, int sample_rate) {
  const double nyq = sample_rate / 2.0;
  if (taps < 31 || taps % 2 == 0) throw InputError("fir_filter: taps must be odd and >= 31");
  if (!(b.f1 > 0.0 && b.f1 < nyq)) throw InputError("fir_filter: cutoff must lie in (0, Nyquist)");
  if (b.kind == FilterKind::bandpass) {
    if (!(b.f2 > 0.0 && b.f2 < nyq)) throw InputError("fir_filter: upper cutoff must lie in (0, Nyquist)");
    if (!(b.f1 < b.f2)) throw InputError("fir_filter: bandpass requires lower cutoff < upper cutoff");
  }
}

inline Signal design_fir(const FilterBand& b, int taps, int sample_rate) {
  validate_filter(b, taps, sample_rate);
  const int m = (taps - 1) / 2;
  switch (b.kind) {
    case FilterKind::lowpass:
      return design_lowpass(b.f1, taps, sample_rate);
    case FilterKind::highpass: {
      Signal h = design_lowpass(b.f1, taps, sample_rate);
      for (auto& v : h) v = -v;
      h[m] += 1.0;
      return h;
    }
    case FilterKind::bandpass: {
      Signal lo = design_lowpass(b.f1, taps, sample_rate);
      Signal h = design_lowpass(b.f2, taps, sample_rate);
      for (int n = 0; n < taps; ++n) h[n] -= lo[n];
      return h;
    }
  }
  return {};
}

/// Linear-phase convolution trimmed to the input length, shifted by the
/// group delay (taps - 1) / 2.
inline Signal convolve_same(const Signal& x, const Signal& h) {
  const long n = static_cast<long>(x.size());
  const long L = static_cast<long>(h.size());
  const long m = (L - 1) / 2;
  Signal y(x.size(), 0.0);
  for (long i = 0; i < n; ++i) {
    double acc = 0.0;
    const long k_lo = std::max(0L, i + m - (n - 1));
    const long k_hi = std::min(L - 1, i + m);
    for (long k = k_lo; k <= k_hi; ++k) acc += h[k] * x[i + m - k];
    y[i] = acc;
  }
  return y;
}

inline AudioClip fir_filter(const AudioClip& clip, const FilterBand& band, int taps) {
  AudioClip out = clip;
  out.samples = convolve_same(clip.samples, design_fir(band, taps, clip.sample_rate));
  return out;
}

// ------------------------------------------------------- RawBoost-style leaves

struct Notch {
  double center_hz;
  double gain_db;
  double width_hz;
};

/// Linear-phase FIR whose magnitude is the product of Gaussian-shaped
/// notches, designed by frequency sampling plus a Hamming window. With every
/// gain at 0 dB the filter is a pure delay.
inline Signal design_notch_fir(const std::vector<Notch>& notches, int taps, int sample_rate) {
  const int m = (taps - 1) / 2;
  std::vector<double> H(static_cast<std::size_t>(m) + 1);
  for (int k = 0; k <= m; ++k) {
    const double f = static_cast<double>(k) * sample_rate / taps;
    double g = 1.0;
    for (const auto& nt : notches) {
      const double depth = 1.0 - std::pow(10.0, nt.gain_db / 20.0);
      const double d = (f - nt.center_hz) / nt.width_hz;
      g *= 1.0 - depth * std::exp(-d * d);
    }
    H[k] = g;
  }
  Signal h(static_cast<std::size_t>(taps));
  for (int n = 0; n < taps; ++n) {
    double acc = H[0];
    for (int k = 1; k <= m; ++k) acc += 2.0 * H[k] * std::cos(2.0 * std::numbers::pi * k * (n - m) / taps);
    h[n] = acc / taps * hamming(n, taps);
  }
  return h;
}

inline std::vector<Notch> random_notches(int count, double gain_db_lo, double gain_db_hi, int sample_rate, Rng& rng) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const double f_lo = 100.0, f_hi = 0.45 * sample_rate;
  std::vector<Notch> out;
  for (int i = 0; i < count; ++i) {
    Notch nt;
    nt.center_hz = f_lo * std::pow(f_hi / f_lo, u01(rng));
    nt.gain_db = gain_db_lo + (gain_db_hi - gain_db_lo) * u01(rng);
    nt.width_hz = 100.0 + 700.0 * u01(rng);
    out.push_back(nt);
  }
  return out;
}

inline constexpr int kNotchTaps = 129;

/// Random multi-notch FIR followed by tanh(drive*x)/tanh(drive) when drive > 0.
inline AudioClip convolutive_distortion(const AudioClip& clip, int n_notches, double gain_db_lo, double gain_db_hi,
                                        double clip_drive, Rng& rng) {
  if (n_notches < 1 || n_notches > 8) throw InputError("convolutive_distortion: n_notches must lie in [1, 8]");
  if (gain_db_lo > gain_db_hi) throw InputError("convolutive_distortion: gain range is inverted");
  const auto notches = random_notches(n_notches, gain_db_lo, gain_db_hi, clip.sample_rate, rng);
  AudioClip out = clip;
  out.samples = convolve_same(clip.samples, design_notch_fir(notches, kNotchTaps, clip.sample_rate));
  if (clip_drive > 0.0) {
    const double norm = std::tanh(clip_drive);
    for (auto& v : out.samples) v = std::tanh(clip_drive * v) / norm;
  }
  return out;
}

/// Poisson event positions (sample indices) at `rate` events per second.
inline std::vector<std::size_t> impulse_positions(std::size_t n_samples, int sample_rate, double rate, Rng& rng) {
  std::exponential_distribution<double> gap(rate / sample_rate);
  std::vector<std::size_t> pos;
  double t = gap(rng);
  while (t < static_cast<double>(n_samples)) {
    pos.push_back(static_cast<std::size_t>(t));
    t += gap(rng);
  }
  return pos;
}

inline constexpr std::size_t kLocalRmsHalfWindow = 200;

inline AudioClip impulsive_noise(const AudioClip& clip, double event_rate, double amp_scale, Rng& rng) {
  if (!(event_rate > 0.0)) throw InputError("impulsive_noise: event_rate must be positive");
  const std::size_t n = clip.size();
  const auto pos = impulse_positions(n, clip.sample_rate, event_rate, rng);
  std::vector<double> csum(n + 1, 0.0);
  for (std::size_t i = 0; i < n; ++i) csum[i + 1] = csum[i] + clip.samples[i] * clip.samples[i];
  std::uniform_real_distribution<double> mag(0.5, 1.5);
  std::bernoulli_distribution sign(0.5);
  AudioClip out = clip;
  for (std::size_t p : pos) {
    const std::size_t lo = p > kLocalRmsHalfWindow ? p - kLocalRmsHalfWindow : 0;
    const std::size_t hi = std::min(n, p + kLocalRmsHalfWindow + 1);
    const double local = std::sqrt(std::max(0.0, csum[hi] - csum[lo]) / static_cast<double>(hi - lo));
    const double a = mag(rng) * (sign(rng) ? 1.0 : -1.0);
    out.samples[p] += amp_scale * local * a;
  }
  return out;
}

/// Noise component of the stationary (signal-independent) attack: white noise
/// colored by a random multi-band FIR.
inline Signal stationary_noise_component(std::size_t length, int sample_rate, int n_bands, double gain_db_lo,
                                         double gain_db_hi, Rng& rng) {
  auto noise = gen_noise(NoiseColor::white, length, rng);
  const auto bands = random_notches(n_bands, gain_db_lo, gain_db_hi, sample_rate, rng);
  return convolve_same(noise, design_notch_fir(bands, kNotchTaps, sample_rate));
}

// ---------------------------------------------------------------- codec

/// mu-law (mu = 255) companding, uniform quantization at `bits`, expansion,
/// then a linear-interpolation resample round trip through `resample_hz`.
inline AudioClip codec_sim(const AudioClip& clip, int bits, int resample_hz) {
  if (bits < 6 || bits > 12) throw InputError("codec_sim: bits must lie in [6, 12]");
  if (resample_hz <= 0 || resample_hz > clip.sample_rate) {
    throw InputError("codec_sim: resample_hz must lie in (0, sample_rate]");
  }
  constexpr double mu = 255.0;
  const double lmu = std::log1p(mu);
  const double q = std::ldexp(1.0, bits - 1) - 1.0;
  Signal y(clip.size());
  for (std::size_t i = 0; i < clip.size(); ++i) {
    const double x = std::clamp(clip.samples[i], -1.0, 1.0);
    const double c = std::copysign(std::log1p(mu * std::abs(x)) / lmu, x);
    const double cq = std::nearbyint(c * q) / q;
    y[i] = std::copysign(std::expm1(std::abs(cq) * lmu) / mu, cq);
  }
  AudioClip out = clip;
  if (resample_hz == clip.sample_rate) {
    out.samples = std::move(y);
    return out;
  }
  auto lerp_at = [](const Signal& s, double t) {
    if (t <= 0.0) return s.front();
    const double last = static_cast<double>(s.size() - 1);
    if (t >= last) return s.back();
    const auto i = static_cast<std::size_t>(t);
    const double f = t - static_cast<double>(i);
    return s[i] + f * (s[i + 1] - s[i]);
  };
  const double ratio = static_cast<double>(clip.sample_rate) / resample_hz;
  const auto n_low = static_cast<std::size_t>(std::ceil(static_cast<double>(clip.size()) / ratio));
  Signal low(n_low);
  for (std::size_t i = 0; i < n_low; ++i) low[i] = lerp_at(y, static_cast<double>(i) * ratio);
  for (std::size_t j = 0; j < clip.size(); ++j) out.samples[j] = lerp_at(low, static_cast<double>(j) / ratio);
  return out;
}

// ---------------------------------------------------------------- specs

enum class AttackKind {
  convolutive,
  impulsive_noise,
  stationary_noise,
  gaussian_noise,
  color_noise,
  fir_filter,
  codec_sim,
  series,
  parallel
};

inline const char* kind_name(AttackKind k) {
  switch (k) {
    case AttackKind::convolutive: return "convolutive";
    case AttackKind::impulsive_noise: return "impulsive_noise";
    case AttackKind::stationary_noise: return "stationary_noise";
    case AttackKind::gaussian_noise: return "gaussian_noise";
    case AttackKind::color_noise: return "color_noise";
    case AttackKind::fir_filter: return "fir_filter";
    case AttackKind::codec_sim: return "codec_sim";
    case AttackKind::series: return "series";
    case AttackKind::parallel: return "parallel";
  }
  return "?";
}

inline AttackKind parse_kind(const std::string& s) {
  for (auto k : {AttackKind::convolutive, AttackKind::impulsive_noise, AttackKind::stationary_noise,
                 AttackKind::gaussian_noise, AttackKind::color_noise, AttackKind::fir_filter, AttackKind::codec_sim,
                 AttackKind::series, AttackKind::parallel}) {
    if (s == kind_name(k)) return k;
  }
  throw InputError("unknown attack kind '" + s + "'");
}

inline bool is_composite(AttackKind k) { return k == AttackKind::series || k == AttackKind::parallel; }

/// Serializable description of one attack or a composition of attacks.
///
/// Leaf parameters (all optional, defaults shown by `default_params`):
///   convolutive       n_notches [1,8], gain_db_min <= gain_db_max <= 0, clip_drive >= 0
///   impulsive_noise   event_rate > 0 (events/s), amp_scale >= 0
///   stationary_noise  snr_min <= snr_max in [-10,60], n_bands [1,8], gain_db_min <= gain_db_max <= 0
///   gaussian_noise    snr_min <= snr_max in [-10,60]
///   color_noise       colors: subset of {white,pink,brown}, snr_min, snr_max
///   fir_filter        bank: [{type, f1[, f2]}], taps odd >= 31; one band is drawn per clip
///   codec_sim         bits [6,12], resample_hz
struct AttackSpec {
  AttackKind kind = AttackKind::gaussian_noise;
  nlohmann::json params = nlohmann::json::object();
  std::vector<AttackSpec> children;
  std::uint64_t seed = 0;

  friend bool operator==(const AttackSpec&, const AttackSpec&) = default;
};

inline nlohmann::json default_params(AttackKind k) {
  using nlohmann::json;
  switch (k) {
    case AttackKind::convolutive:
      return {{"n_notches", 5}, {"gain_db_min", -24.0}, {"gain_db_max", -6.0}, {"clip_drive", 2.0}};
    case AttackKind::impulsive_noise:
      return {{"event_rate", 100.0}, {"amp_scale", 2.0}};
    case AttackKind::stationary_noise:
      return {{"snr_min", 5.0}, {"snr_max", 20.0}, {"n_bands", 4}, {"gain_db_min", -20.0}, {"gain_db_max", 0.0}};
    case AttackKind::gaussian_noise:
      return {{"snr_min", 5.0}, {"snr_max", 20.0}};
    case AttackKind::color_noise:
      return {{"colors", json::array({"white", "pink", "brown"})}, {"snr_min", 5.0}, {"snr_max", 20.0}};
    case AttackKind::fir_filter:
      return {{"bank", json::array({json{{"type", "lowpass"}, {"f1", 4000.0}}})}, {"taps", 101}};
    case AttackKind::codec_sim:
      return {{"bits", 8}, {"resample_hz", 8000}};
    default:
      return json::object();
  }
}

namespace detail {

inline double num(const nlohmann::json& p, const char* key, double dflt) {
  if (!p.contains(key)) return dflt;
  if (!p.at(key).is_number()) throw InputError(std::string("attack param '") + key + "' must be a number");
  return p.at(key).get<double>();
}

inline nlohmann::json resolved(const AttackSpec& s) {
  nlohmann::json p = default_params(s.kind);
  for (auto it = s.params.begin(); it != s.params.end(); ++it) p[it.key()] = it.value();
  return p;
}

inline std::vector<FilterBand> parse_bank(const nlohmann::json& p) {
  std::vector<FilterBand> bank;
  for (const auto& b : p.at("bank")) {
    FilterBand fb;
    fb.kind = parse_filter_kind(b.at("type").get<std::string>());
    fb.f1 = b.at("f1").get<double>();
    fb.f2 = b.value("f2", 0.0);
    bank.push_back(fb);
  }
  return bank;
}

inline void check_snr_range(const nlohmann::json& p, const char* kind) {
  const double lo = num(p, "snr_min", 0), hi = num(p, "snr_max", 0);
  if (!(lo >= -10.0 && hi <= 60.0 && lo <= hi)) {
    throw InputError(std::string(kind) + ": SNR range must satisfy -10 <= snr_min <= snr_max <= 60");
  }
}

}  // namespace detail

/// Throws InputError describing the first violated constraint.
inline void validate(const AttackSpec& s, int sample_rate = 16000) {
  if (is_composite(s.kind)) {
    if (s.children.size() < 2) throw InputError(std::string(kind_name(s.kind)) + " needs at least 2 children");
    for (const auto& c : s.children) validate(c, sample_rate);
    return;
  }
  if (!s.children.empty()) throw InputError(std::string(kind_name(s.kind)) + " is a leaf and cannot have children");
  if (!s.params.is_object()) throw InputError("attack params must be an object");
  const auto p = detail::resolved(s);
  using detail::num;
  switch (s.kind) {
    case AttackKind::convolutive: {
      const double n = num(p, "n_notches", 0);
      if (n < 1 || n > 8 || n != std::floor(n)) throw InputError("convolutive: n_notches must be an integer in [1, 8]");
      if (!(num(p, "gain_db_min", 0) <= num(p, "gain_db_max", 0) && num(p, "gain_db_max", 0) <= 0.0))
        throw InputError("convolutive: need gain_db_min <= gain_db_max <= 0");
      if (num(p, "clip_drive", 0) < 0.0) throw InputError("convolutive: clip_drive must be >= 0");
      break;
    }
    case AttackKind::impulsive_noise:
      if (!(num(p, "event_rate", 0) > 0.0)) throw InputError("impulsive_noise: event_rate must be > 0");
      if (num(p, "amp_scale", 0) < 0.0) throw InputError("impulsive_noise: amp_scale must be >= 0");
      break;
    case AttackKind::stationary_noise: {
      detail::check_snr_range(p, "stationary_noise");
      const double n = num(p, "n_bands", 0);
      if (n < 1 || n > 8 || n != std::floor(n)) throw InputError("stationary_noise: n_bands must be an integer in [1, 8]");
      if (!(num(p, "gain_db_min", 0) <= num(p, "gain_db_max", 0) && num(p, "gain_db_max", 0) <= 0.0))
        throw InputError("stationary_noise: need gain_db_min <= gain_db_max <= 0");
      break;
    }
    case AttackKind::gaussian_noise:
      detail::check_snr_range(p, "gaussian_noise");
      break;
    case AttackKind::color_noise:
      detail::check_snr_range(p, "color_noise");
      if (!p.at("colors").is_array() || p.at("colors").empty()) throw InputError("color_noise: colors must be non-empty");
      for (const auto& c : p.at("colors")) parse_color(c.get<std::string>());
      break;
    case AttackKind::fir_filter: {
      const int taps = static_cast<int>(num(p, "taps", 0));
      const auto bank = detail::parse_bank(p);
      if (bank.empty()) throw InputError("fir_filter: bank must be non-empty");
      for (const auto& b : bank) validate_filter(b, taps, sample_rate);
      break;
    }
    case AttackKind::codec_sim: {
      const double bits = num(p, "bits", 0);
      if (bits < 6 || bits > 12) throw InputError("codec_sim: bits must lie in [6, 12]");
      const double rs = num(p, "resample_hz", 0);
      if (!(rs > 0 && rs <= sample_rate)) throw InputError("codec_sim: resample_hz must lie in (0, sample_rate]");
      break;
    }
    default:
      break;
  }
}

inline nlohmann::json to_json(const AttackSpec& s) {
  nlohmann::json j;
  j["kind"] = kind_name(s.kind);
  j["seed"] = s.seed;
  if (is_composite(s.kind)) {
    j["children"] = nlohmann::json::array();
    for (const auto& c : s.children) j["children"].push_back(to_json(c));
  } else {
    j["params"] = s.params;
  }
  return j;
}

inline AttackSpec from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("kind")) throw InputError("attack spec must be an object with a 'kind'");
  AttackSpec s;
  s.kind = parse_kind(j.at("kind").get<std::string>());
  s.seed = j.value("seed", std::uint64_t{0});
  if (j.contains("params")) s.params = j.at("params");
  if (j.contains("children")) {
    for (const auto& c : j.at("children")) s.children.push_back(from_json(c));
  }
  return s;
}

inline AttackSpec leaf(AttackKind kind, nlohmann::json params = nlohmann::json::object(), std::uint64_t seed = 0) {
  AttackSpec s;
  s.kind = kind;
  s.params = std::move(params);
  s.seed = seed;
  return s;
}

enum class ComposeMode { series, parallel };

/// Series applies children in list order; parallel averages the children's
/// outputs, each computed from the original clip.
inline AttackSpec compose(std::vector<AttackSpec> specs, ComposeMode mode, std::uint64_t seed = 0) {
  if (specs.size() < 2) throw InputError("compose: need at least 2 attack specs");
  AttackSpec s;
  s.kind = mode == ComposeMode::series ? AttackKind::series : AttackKind::parallel;
  s.children = std::move(specs);
  s.seed = seed;
  return s;
}

// ---------------------------------------------------------------- dispatch

inline constexpr double kPeakLimit = 0.999;

struct AttackOutcome {
  AudioClip clip;
  bool peak_normalized = false;
};

/// Seed of the private RNG stream a leaf uses for one clip.
inline std::uint64_t leaf_stream_seed(std::uint64_t seed, const std::string& clip_id) {
  return derive_seed(seed, std::numeric_limits<std::uint64_t>::max(), clip_id);
}

namespace detail {

inline bool peak_guard(Signal& x) {
  double peak = 0.0;
  for (double v : x) peak = std::max(peak, std::abs(v));
  if (peak <= 1.0) return false;
  const double s = kPeakLimit / peak;
  for (auto& v : x) v *= s;
  return true;
}

inline double uniform(Rng& rng, double lo, double hi) {
  return lo + (hi - lo) * std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

inline AudioClip apply_leaf(const AudioClip& clip, const AttackSpec& spec, std::uint64_t seed) {
  const auto p = resolved(spec);
  Rng rng(leaf_stream_seed(seed, clip.id));
  switch (spec.kind) {
    case AttackKind::convolutive:
      return convolutive_distortion(clip, static_cast<int>(num(p, "n_notches", 5)), num(p, "gain_db_min", 0),
                                    num(p, "gain_db_max", 0), num(p, "clip_drive", 0), rng);
    case AttackKind::impulsive_noise:
      return impulsive_noise(clip, num(p, "event_rate", 1), num(p, "amp_scale", 0), rng);
    case AttackKind::stationary_noise: {
      const double snr = uniform(rng, num(p, "snr_min", 0), num(p, "snr_max", 0));
      const auto noise = stationary_noise_component(clip.size(), clip.sample_rate, static_cast<int>(num(p, "n_bands", 1)),
                                                    num(p, "gain_db_min", 0), num(p, "gain_db_max", 0), rng);
      return add_noise_at_snr(clip, noise, snr);
    }
    case AttackKind::gaussian_noise: {
      const double snr = uniform(rng, num(p, "snr_min", 0), num(p, "snr_max", 0));
      return add_noise_at_snr(clip, gen_noise(NoiseColor::white, clip.size(), rng), snr);
    }
    case AttackKind::color_noise: {
      const auto& colors = p.at("colors");
      const auto idx = std::uniform_int_distribution<std::size_t>(0, colors.size() - 1)(rng);
      const auto color = parse_color(colors.at(idx).get<std::string>());
      const double snr = uniform(rng, num(p, "snr_min", 0), num(p, "snr_max", 0));
      return add_noise_at_snr(clip, gen_noise(color, clip.size(), rng), snr);
    }
    case AttackKind::fir_filter: {
      const auto bank = parse_bank(p);
      const auto idx = std::uniform_int_distribution<std::size_t>(0, bank.size() - 1)(rng);
      return fir_filter(clip, bank[idx], static_cast<int>(num(p, "taps", 101)));
    }
    case AttackKind::codec_sim:
      return codec_sim(clip, static_cast<int>(num(p, "bits", 8)), static_cast<int>(num(p, "resample_hz", 8000)));
    default:
      throw InternalError("apply_leaf: composite kind");
  }
}

inline AudioClip apply_node(const AudioClip& clip, const AttackSpec& spec, std::uint64_t seed, bool& normalized) {
  if (!is_composite(spec.kind)) {
    AudioClip out = apply_leaf(clip, spec, seed);
    normalized = peak_guard(out.samples) || normalized;
    return out;
  }
  if (spec.kind == AttackKind::series) {
    AudioClip cur = clip;
    for (std::size_t i = 0; i < spec.children.size(); ++i) {
      cur = apply_node(cur, spec.children[i], derive_seed(seed, i, clip.id), normalized);
    }
    return cur;
  }
  AudioClip acc = clip;
  std::fill(acc.samples.begin(), acc.samples.end(), 0.0);
  for (std::size_t i = 0; i < spec.children.size(); ++i) {
    const AudioClip out = apply_node(clip, spec.children[i], derive_seed(seed, i, clip.id), normalized);
    for (std::size_t j = 0; j < acc.size(); ++j) acc.samples[j] += out.samples[j];
  }
  const double inv = 1.0 / static_cast<double>(spec.children.size());
  for (auto& v : acc.samples) v *= inv;
  return acc;
}

}  // namespace detail

/// Applies `spec` to `clip`. A composite hands child i the seed
/// derive_seed(parent_seed, i, clip.id); the child's own seed field is not
/// consulted. Every leaf output whose peak exceeds 1 is rescaled to 0.999.
inline AttackOutcome run_attack(const AudioClip& clip, const AttackSpec& spec) {
  clip.validate();
  validate(spec, clip.sample_rate);
  AttackOutcome res;
  res.clip = detail::apply_node(clip, spec, spec.seed, res.peak_normalized);
  return res;
}

inline AudioClip apply_attack(const AudioClip& clip, const AttackSpec& spec) { return run_attack(clip, spec).clip; }

}  // namespace amulet::attacks
