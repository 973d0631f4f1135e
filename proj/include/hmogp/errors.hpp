#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace hmogp {

/// Base of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A matrix could not be factorized even after the full jitter escalation.
class IndefiniteMatrixError : public Error {
 public:
  using Error::Error;
};

class UnsupportedKernelError : public Error {
 public:
  using Error::Error;
};

/// Non-finite objective; `span()` names the parameter block that was being evaluated.
class EvaluationError : public Error {
 public:
  EvaluationError(const std::string& span, const std::string& what)
      : Error(span.empty() ? what : span + ": " + what), span_(span) {}
  const std::string& span() const noexcept { return span_; }

 private:
  std::string span_;
};

class ReplicaTagError : public Error {
 public:
  using Error::Error;
};

class SchemaError : public Error {
 public:
  SchemaError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Invalid configuration; the message starts with the offending field path.
class ConfigError : public Error {
 public:
  ConfigError(const std::string& field, const std::string& what)
      : Error(field + ": " + what), field_(field) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

class SplitError : public Error {
 public:
  using Error::Error;
};

class FitError : public Error {
 public:
  using Error::Error;
};

}  // namespace hmogp
