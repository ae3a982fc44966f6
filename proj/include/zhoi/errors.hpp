#pragma once

#include <stdexcept>
#include <string>

namespace zhoi {

/// Bad input: malformed files, inconsistent ids, unknown config keys.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A zero-shot split whose constraints cannot be met.
class InfeasibleSplitError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

/// Failure while running (non-finite loss, I/O).
class RuntimeFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace zhoi
