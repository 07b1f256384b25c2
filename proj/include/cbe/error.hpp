#pragma once

#include <stdexcept>
#include <string>

namespace cbe {

/// Root of every error the library throws.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input text (JSON, JSON-lines, numbers). Carries the 1-based line
/// number when it is known, 0 otherwise.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line = 0)
      : Error(line ? what + " (line " + std::to_string(line) + ")" : what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

/// A concept name or value that the active schema does not know.
class SchemaError : public Error {
 public:
  using Error::Error;
};

/// Structurally valid data that violates an invariant (label range, counts, ...).
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Invalid hyperparameters or CLI/service configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Shape disagreement between model components.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// The annotator transport failed after exhausting its retry budget.
class AnnotationError : public Error {
 public:
  using Error::Error;
};

/// A single annotator request failed (network, HTTP status, malformed body).
/// annotate() retries these before giving up with AnnotationError.
class TransportError : public Error {
 public:
  using Error::Error;
};

}  // namespace cbe
