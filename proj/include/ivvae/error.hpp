#pragma once

#include <stdexcept>
#include <string>

namespace ivvae {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor or vector shapes disagree with the declared contract.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values or arguments outside a function's numeric domain.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Input values outside a validated range (e.g. pixel targets outside [0,1]).
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Estimator cannot be formed from the given batch (e.g. fewer than two samples).
class EstimatorError : public Error {
 public:
  using Error::Error;
};

/// Variant/weight combinations or run settings that do not make sense together.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Dataset archive or file did not match the expected layout.
class IngestionError : public Error {
 public:
  using Error::Error;
};

/// Malformed binary container (IDX, npy, zip, checkpoint).
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Oracle table too large to enumerate.
class EnumerabilityError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite objective.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace ivvae
