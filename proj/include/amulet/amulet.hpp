// Copyright 2026 The AMULET-Desk Authors
// SPDX-License-Identifier: Apache-2.0
//
// Umbrella header.

#pragma once

#include "amulet/attacks.hpp"
#include "amulet/audio.hpp"
#include "amulet/autograd.hpp"
#include "amulet/checkpoint.hpp"
#include "amulet/config.hpp"
#include "amulet/dataset.hpp"
#include "amulet/errors.hpp"
#include "amulet/eval.hpp"
#include "amulet/experts.hpp"
#include "amulet/fusion.hpp"
#include "amulet/hashing.hpp"
#include "amulet/ops.hpp"
#include "amulet/pipeline.hpp"
#include "amulet/presets.hpp"
#include "amulet/tensor.hpp"
#include "amulet/training.hpp"
#include "amulet/wav.hpp"
