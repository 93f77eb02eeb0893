//
// Project msdiff - Copyright 2026 the msdiff developers.
// SPDX-License-Identifier: Apache-2.0
//

#ifndef MSDIFF_UTIL_ERRORS_HPP
#define MSDIFF_UTIL_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace msdiff {

/// Base class for all msdiff errors.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string &what) : std::runtime_error(what) {}
};

// --- chem ---

class ParseError : public Error {
 public:
  using Error::Error;
};

class UnknownElementError : public ParseError {
 public:
  explicit UnknownElementError(const std::string &sym)
      : ParseError("unknown element: " + sym) {}
};

class MalformedFormulaError : public ParseError {
 public:
  using ParseError::ParseError;
};

class UnsupportedFeatureError : public ParseError {
 public:
  using ParseError::ParseError;
};

class InvalidGraphError : public Error {
 public:
  using Error::Error;
};

// --- fingerprint ---

class WidthMismatchError : public Error {
 public:
  using Error::Error;
};

// --- numerics / model ---

class ShapeMismatchError : public Error {
 public:
  using Error::Error;
};

class NonFiniteError : public Error {
 public:
  using Error::Error;
};

class DegeneratePosteriorError : public Error {
 public:
  using Error::Error;
};

class NegativeLossError : public Error {
 public:
  using Error::Error;
};

// --- data / pipeline ---

class DataError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace msdiff

#endif  // MSDIFF_UTIL_ERRORS_HPP
