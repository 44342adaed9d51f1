#pragma once

#include <stdexcept>
#include <string>

namespace wsf {

// Base of every error raised by the library. Subclasses map onto CLI exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor shape disagreement; message names the layer and both shapes.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Malformed or inconsistent input data, configs, or files.
class DataError : public Error {
 public:
  using Error::Error;
};

// A value became NaN/Inf during computation.
class NonFiniteError : public Error {
 public:
  using Error::Error;
};

// Training loss diverged.
class TrainingDivergence : public Error {
 public:
  using Error::Error;
};

// Violation of the multi-site transfer protocol or a model lifecycle rule.
class ProtocolError : public Error {
 public:
  using Error::Error;
};

}  // namespace wsf
