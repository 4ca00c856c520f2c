#pragma once

#include <stdexcept>
#include <string>

namespace kiprompt {

/// Base class for every error thrown by this library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad caller-supplied input: malformed files, out-of-range parameters,
/// violated preconditions. Maps to CLI exit code 2.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Raised when items reserved for the test set leak into a dev/tuning set.
class LeakageError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

/// Filesystem failure (unreadable path, failed write). CLI exit code 4.
class IoError : public Error {
 public:
  using Error::Error;
};

enum class OracleErrorKind {
  Auth,              // missing/rejected credentials; never retried
  RateLimited,       // HTTP 429 still failing after all retries
  Transport,         // network failure or server error after all retries
  MalformedResponse  // 2xx body that does not parse as a chat completion
};

/// Failure talking to the completion oracle. Maps to CLI exit code 3.
class OracleError : public Error {
 public:
  OracleError(OracleErrorKind kind, const std::string& message)
      : Error(message), kind_(kind) {}

  OracleErrorKind kind() const { return kind_; }

 private:
  OracleErrorKind kind_;
};

}  // namespace kiprompt
