// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace pairdiff {

/// Base of every error raised by the library. The CLI maps subclasses to exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes that cannot be combined; the message names the offending axes.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration value or cross-field inconsistency.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A caller violated an operation's precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Malformed or truncated file, or a missing input file.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// A metric is undefined for its input, e.g. a surface distance to an empty mask.
class DefinedValueError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf encountered where finite values are required.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace pairdiff
