// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace sffda {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor extents or ranks.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Malformed text input (landmark files, manifests, configs).
class ParseError : public Error {
 public:
  using Error::Error;
};

/// Malformed or unsupported binary container.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Invalid argument or configuration value.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A pipeline stage could not produce a result from valid-looking input.
class DataError : public Error {
 public:
  using Error::Error;
};

}  // namespace sffda
