#pragma once

#include <stdexcept>
#include <string>

namespace rhetor {

// Base class for all errors raised by this library. Subclasses map onto the
// CLI exit codes: config 2, data integrity 3, backend exhaustion 4.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgumentError : public Error {
 public:
  using Error::Error;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

class DataIntegrityError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class StorageError : public Error {
 public:
  using Error::Error;
};

// Comparison graph of a panel is disconnected: scores of the components
// cannot be placed on a common scale.
class UnidentifiablePanelError : public DataIntegrityError {
 public:
  using DataIntegrityError::DataIntegrityError;
};

// Unsmoothed fit requested but some persona never wins (or never loses);
// the maximum-likelihood score would diverge.
class DegenerateMleError : public DataIntegrityError {
 public:
  using DataIntegrityError::DataIntegrityError;
};

// Backend replied, but the reply could not be parsed under the protocol
// even after retries. Carries the last raw response for diagnostics.
class JudgeProtocolError : public Error {
 public:
  JudgeProtocolError(const std::string& message, std::string raw_response,
                     int attempts)
      : Error(message),
        raw_response(std::move(raw_response)),
        attempts(attempts) {}

  std::string raw_response;
  int attempts = 0;
};

class GeneratorProtocolError : public Error {
 public:
  using Error::Error;
};

// Transient transport failure (connection refused, 5xx, 429); retryable.
class TransportError : public Error {
 public:
  using Error::Error;
};

// Transport retries exhausted without a usable response.
class TransportExhaustedError : public Error {
 public:
  using Error::Error;
};

class ExtractionFailedError : public Error {
 public:
  using Error::Error;
};

class NumericDegeneracyError : public Error {
 public:
  using Error::Error;
};

}  // namespace rhetor
