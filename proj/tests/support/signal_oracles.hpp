// Copyright 2026 The AMULET-Desk Authors
// SPDX-License-Identifier: Apache-2.0
//
// Signal fixtures and direct-computation oracles shared by the attack tests
// and the acceptance runner.

#pragma once

#include <cmath>
#include <complex>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "amulet/amulet.hpp"

namespace amulet::testing {

using attacks::AttackSpec;

inline constexpr int kFs = 16000;

inline AudioClip sine_clip(double hz, double amp, std::size_t n = kFs, std::string id = "sine") {
  AudioClip c;
  c.id = std::move(id);
  c.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) c.samples[i] = amp * std::sin(2.0 * std::numbers::pi * hz * i / kFs);
  return c;
}

// A few harmonics with a wobbly envelope plus a little noise.
inline AudioClip voiced_clip(std::uint64_t seed, std::size_t n = kFs) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, 0.01);
  AudioClip c;
  c.id = "voiced" + std::to_string(seed);
  c.samples.resize(n);
  const double f0 = 110.0 + static_cast<double>(seed % 50);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / kFs;
    double v = 0.0;
    for (int h = 1; h <= 6; ++h) v += std::sin(2.0 * std::numbers::pi * f0 * h * t) / h;
    c.samples[i] = 0.25 * (0.6 + 0.4 * std::sin(2.0 * std::numbers::pi * 3.0 * t)) * v + nd(rng);
  }
  return c;
}

inline double power(const attacks::Signal& x) {
  double s = 0.0;
  for (double v : x) s += v * v;
  return s / static_cast<double>(x.size());
}

inline attacks::Signal diff(const attacks::Signal& a, const attacks::Signal& b) {
  attacks::Signal d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  return d;
}

inline double l2(const attacks::Signal& a, const attacks::Signal& b) { return std::sqrt(power(diff(a, b)) * a.size()); }

// Magnitude of the DFT of x at an arbitrary frequency.
inline double tone_mag(const attacks::Signal& x, double hz, std::size_t lo = 0, std::size_t hi = 0) {
  if (hi == 0) hi = x.size();
  std::complex<double> acc = 0.0;
  for (std::size_t i = lo; i < hi; ++i) acc += x[i] * std::polar(1.0, -2.0 * std::numbers::pi * hz * i / kFs);
  return std::abs(acc);
}

inline double rms_ratio_db(const attacks::Signal& out, const attacks::Signal& in, std::size_t trim) {
  double po = 0.0, pi = 0.0;
  for (std::size_t i = trim; i + trim < in.size(); ++i) {
    po += out[i] * out[i];
    pi += in[i] * in[i];
  }
  return 10.0 * std::log10(po / pi);
}

// Averaged periodogram over 1024-sample segments, then a least-squares fit of
// dB power against log10(f) for bins in [100 Hz, 4 kHz].
inline double spectral_slope_db_per_decade(const attacks::Signal& x) {
  constexpr std::size_t N = 1024;
  const std::size_t segs = x.size() / N;
  std::vector<double> P(N / 2 + 1, 0.0);
  std::vector<std::complex<double>> tw(N);
  for (std::size_t k = 0; k < N; ++k) tw[k] = std::polar(1.0, -2.0 * std::numbers::pi * k / N);
  for (std::size_t s = 0; s < segs; ++s) {
    for (std::size_t k = 1; k <= N / 2; ++k) {
      std::complex<double> acc = 0.0;
      for (std::size_t n = 0; n < N; ++n) acc += x[s * N + n] * tw[(k * n) % N];
      P[k] += std::norm(acc);
    }
  }
  double sx = 0, sy = 0, sxx = 0, sxy = 0, m = 0;
  for (std::size_t k = 1; k <= N / 2; ++k) {
    const double f = static_cast<double>(k) * kFs / N;
    if (f < 100.0 || f > 4000.0) continue;
    const double lx = std::log10(f), ly = 10.0 * std::log10(P[k] / segs);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
    m += 1;
  }
  return (m * sxy - sx * sy) / (m * sxx - sx * sx);
}


inline AudioClip manual_chain(const AudioClip& clip, const AttackSpec& spec) {
  AudioClip cur = clip;
  for (std::size_t i = 0; i < spec.children.size(); ++i) {
    AttackSpec child = spec.children[i];
    child.seed = derive_seed(spec.seed, i, clip.id);
    cur = attacks::apply_attack(cur, child);
  }
  return cur;
}

inline AudioClip manual_average(const AudioClip& clip, const AttackSpec& spec) {
  AudioClip acc = clip;
  std::fill(acc.samples.begin(), acc.samples.end(), 0.0);
  for (std::size_t i = 0; i < spec.children.size(); ++i) {
    AttackSpec child = spec.children[i];
    child.seed = derive_seed(spec.seed, i, clip.id);
    const auto out = attacks::apply_attack(clip, child);
    for (std::size_t j = 0; j < acc.size(); ++j) acc.samples[j] += out.samples[j];
  }
  for (auto& v : acc.samples) v *= 1.0 / static_cast<double>(spec.children.size());
  return acc;
}


}  // namespace amulet::testing
