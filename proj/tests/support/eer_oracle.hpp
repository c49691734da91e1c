// Copyright 2026 The AMULET-Desk Authors
// SPDX-License-Identifier: Apache-2.0
//
// Brute-force EER reference and random score sets.

#pragma once

#include <cmath>
#include <random>
#include <set>
#include <vector>

#include "amulet/amulet.hpp"

namespace amulet::testing {

// Threshold below every score, then every midpoint between sorted distinct
// scores; rates counted directly at each one. EER at the first point where
// FAR - FRR drops to <= 0, interpolated against the previous point.
inline double brute_force_eer(const std::vector<double>& bona, const std::vector<double>& spoof) {
  std::set<double> uniq(bona.begin(), bona.end());
  uniq.insert(spoof.begin(), spoof.end());
  const std::vector<double> s(uniq.begin(), uniq.end());
  std::vector<double> thr{s.front() - 1.0};
  for (std::size_t i = 0; i + 1 < s.size(); ++i) thr.push_back(0.5 * (s[i] + s[i + 1]));
  thr.push_back(s.back() + 1.0);
  double pf = 0.0, pa = 1.0;
  for (std::size_t j = 0; j < thr.size(); ++j) {
    double frr = 0.0, far = 0.0;
    for (double b : bona) frr += b < thr[j];
    for (double x : spoof) far += x >= thr[j];
    frr /= bona.size();
    far /= spoof.size();
    if (j > 0 && far - frr <= 0.0) {
      const double lam = (pa - pf) / ((pa - pf) - (far - frr));
      return pf + lam * (frr - pf);
    }
    pf = frr;
    pa = far;
  }
  return -1.0;
}

inline eval::ScoreSet random_set(std::mt19937_64& rng, bool with_ties) {
  eval::ScoreSet s;
  const std::size_t nb = 1 + rng() % 500, ns = 1 + rng() % 500;
  const double shift = std::uniform_real_distribution<double>(-1.0, 3.0)(rng);
  std::normal_distribution<double> nd(0.0, 1.0);
  auto draw = [&](double mu) { return with_ties ? std::round(4.0 * (nd(rng) + mu)) / 4.0 : nd(rng) + mu; };
  for (std::size_t i = 0; i < nb; ++i) s.bona_scores.push_back(draw(shift));
  for (std::size_t i = 0; i < ns; ++i) s.spoof_scores.push_back(draw(0.0));
  return s;
}

}  // namespace amulet::testing
