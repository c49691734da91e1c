// Copyright 2026 The AMULET-Desk Authors
// SPDX-License-Identifier: Apache-2.0
//
// Untracked conveniences over the autograd primitives, for inference paths
// and tests that only need values.

#pragma once

#include <span>
#include <vector>

#include "amulet/autograd.hpp"

namespace amulet {

inline std::vector<double> softmax(std::span<const double> v) {
  if (v.empty()) throw ShapeError("softmax: empty input");
  return ag::softmax(ag::Var::constant(Tensor2::row_vector(v))).value().data();
}

inline Tensor2 layer_norm(const Tensor2& z, std::span<const double> gain, std::span<const double> bias,
                          double eps = 1e-5) {
  return ag::layer_norm(ag::Var::constant(z), ag::Var::constant(Tensor2::row_vector(gain)),
                        ag::Var::constant(Tensor2::row_vector(bias)), eps)
      .value();
}

inline double cross_entropy(std::span<const double> logits, int label) {
  return ag::cross_entropy(ag::Var::constant(Tensor2::row_vector(logits)), label).item();
}

}  // namespace amulet
