// Copyright 2026 The arwkv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace arwkv {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor shapes, ranks or axes.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Invalid or inconsistent configuration (model config, recipe, CLI flags).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A documented precondition on values (not shapes) was violated.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf surfaced by a forward op or the recurrence.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Malformed binary or text input. Carries the byte offset or line number in the message.
class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace arwkv
