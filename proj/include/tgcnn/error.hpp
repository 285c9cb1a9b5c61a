#pragma once

#include <stdexcept>
#include <string>

namespace tgcnn {

// Base of every error raised by the library. The subclasses map one-to-one
// onto the CLI exit codes (see tools/tgcnn.cpp).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shape or argument contract violated by a caller.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Malformed input file, config text or manifest.
class InputError : public Error {
 public:
  using Error::Error;
};

// Data dimensions disagree with a model or another data set.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf produced or supplied where finite values are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Model file fails magic/version/checksum/structure validation.
class ModelFileError : public Error {
 public:
  using Error::Error;
};

}  // namespace tgcnn
