// Copyright 2026 The AMULET-Desk Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <string>
#include <string_view>
#include <vector>

#include "amulet/errors.hpp"

namespace amulet {

enum class Label { bonafide, spoof, unlabeled };

inline std::string_view label_name(Label l) {
  switch (l) {
    case Label::bonafide: return "bonafide";
    case Label::spoof: return "spoof";
    case Label::unlabeled: return "unlabeled";
  }
  return "unlabeled";
}

inline Label parse_label(std::string_view s) {
  if (s == "bonafide" || s == "bona-fide") return Label::bonafide;
  if (s == "spoof") return Label::spoof;
  if (s == "unlabeled") return Label::unlabeled;
  throw InputError("unknown label '" + std::string(s) + "' (expected bonafide or spoof)");
}

/// Class index used by every classifier head: 0 = bona fide, 1 = spoof.
inline int class_index(Label l) {
  if (l == Label::unlabeled) throw InputError("class_index: clip is unlabeled");
  return l == Label::bonafide ? 0 : 1;
}

struct AudioClip {
  std::vector<double> samples;
  int sample_rate = 16000;
  std::string id;
  Label label = Label::unlabeled;

  std::size_t size() const noexcept { return samples.size(); }

  void validate() const {
    if (sample_rate <= 0) throw InputError("clip " + id + ": sample_rate must be positive");
    if (samples.empty()) throw InputError("clip " + id + ": empty");
    for (double v : samples) {
      if (!std::isfinite(v)) throw InputError("clip " + id + ": non-finite sample");
    }
  }
};

inline double mean_power(const std::vector<double>& x) {
  if (x.empty()) return 0.0;
  double s = 0.0;
  for (double v : x) s += v * v;
  return s / static_cast<double>(x.size());
}

inline double rms(const std::vector<double>& x) { return std::sqrt(mean_power(x)); }

}  // namespace amulet
