#pragma once

#include <stdexcept>
#include <string>

namespace anprompt {

/// Root of every error raised by the library. Each subclass names the
/// failure category so callers (and the CLI) can report it precisely.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shapes or widths that do not line up.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration value; the message names the offending field.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Caller handed in input that violates an operation's precondition.
class InputError : public Error {
 public:
  using Error::Error;
};

/// Caption cache cannot satisfy a request (e.g. fewer than two sentences).
class CacheError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values or a degenerate numeric case that cannot be guarded.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// A token sequence would exceed the encoder's maximum length.
class TruncationError : public Error {
 public:
  using Error::Error;
};

/// Problem instance is infeasible (e.g. fewer points than clusters).
class InstanceError : public Error {
 public:
  using Error::Error;
};

/// Argument outside the mathematical domain of a function.
class DomainError : public Error {
 public:
  using Error::Error;
};

class FileError : public Error {
 public:
  using Error::Error;
};

/// Malformed record or file contents; the message names the line or field.
class ParseError : public Error {
 public:
  using Error::Error;
};

}  // namespace anprompt
