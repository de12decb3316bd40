#pragma once

#include <stdexcept>
#include <string>

namespace tinyalign {

// One exception type per class of contract violation, so callers (and the
// CLI) can react specifically instead of string-matching messages.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor shape / sequence length violations.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration values (hyperparameters, model dims, CLI options).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed data files; the message carries the file path and line number.
class SchemaError : public Error {
 public:
  using Error::Error;
};

// Invalid runtime argument values (empty input, non-finite numbers, ...).
class ValueError : public Error {
 public:
  using Error::Error;
};

// Raised by the filtering loss when no sample passes the threshold.
// The training loop treats this as "skip the optimizer step".
class EmptyFilteredBatch : public Error {
 public:
  using Error::Error;
};

// Filesystem failures.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace tinyalign
