#pragma once

#include <stdexcept>
#include <string>

namespace fscil {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand shapes do not conform.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// A NaN or Inf reached an op boundary, or a quantity that must be nonzero was zero.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Precondition or API-contract violation (wrong phase, double spawn, bad argument).
class ContractError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed or unreadable file.
class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace fscil
