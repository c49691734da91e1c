// Copyright 2026 The AMULET-Desk Authors
// SPDX-License-Identifier: Apache-2.0
//
// Error taxonomy shared by every module. User-facing problems (bad input,
// bad config, missing artifacts) derive from InputError; broken internal
// contracts derive from InternalError. The CLI maps the two families onto
// exit codes 1 and 2.

#pragma once

#include <stdexcept>
#include <string>

namespace amulet {

class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public InputError {
 public:
  using InputError::InputError;
};

class DegenerateInputError : public InputError {
 public:
  using InputError::InputError;
};

class UnsupportedEncodingError : public InputError {
 public:
  using InputError::InputError;
};

class IoError : public InputError {
 public:
  using InputError::InputError;
};

/// A required upstream artifact is absent; the message names the stage to run.
class MissingArtifactError : public InputError {
 public:
  using InputError::InputError;
};

class InternalError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class NonFiniteError : public InternalError {
 public:
  using InternalError::InternalError;
};

/// A tensor marked frozen changed during training.
class FrozenContractError : public InternalError {
 public:
  using InternalError::InternalError;
};

/// A checkpoint's content or binding checksum does not match.
class ChecksumMismatchError : public InputError {
 public:
  using InputError::InputError;
};

}  // namespace amulet
