#pragma once

#include <stdexcept>
#include <string>

namespace probeforge {

/// Base of every error raised by the toolkit. The CLI maps all of these to
/// exit code 1.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Unreadable or otherwise unusable input source.
class InputError : public Error {
 public:
  using Error::Error;
};

class EmptyDatasetError : public Error {
 public:
  using Error::Error;
};

/// Inconsistent configuration: missing template, layer limit out of range,
/// encoder identity mismatch.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Schema or cross-file consistency violation.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Caller broke an operation's precondition.
class PreconditionError : public Error {
 public:
  using Error::Error;
};

class NumericalError : public Error {
 public:
  using Error::Error;
};

class InsufficientCorpusError : public Error {
 public:
  using Error::Error;
};

}  // namespace probeforge
