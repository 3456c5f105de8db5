#pragma once

#include <stdexcept>
#include <string>

namespace bae {

/// Root of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Matrix or vector dimensions do not line up.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// An argument is outside its admissible range.
class ParameterError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite loss or exploding variational parameters.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

/// A kernel matrix could not be factorized even after jitter escalation.
class ConditioningError : public Error {
 public:
  using Error::Error;
};

/// Input violates a mathematical domain (e.g. a non-PSD covariance).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// A metric is undefined for the given input (e.g. single-class AUROC).
class MetricError : public Error {
 public:
  using Error::Error;
};

/// Malformed CSV or model file content.
class ParseError : public Error {
 public:
  using Error::Error;
};

/// Experiment configuration is invalid or inconsistent.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// File could not be opened, read or written.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace bae
