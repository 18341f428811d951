#pragma once

#include <stdexcept>
#include <string>

namespace rfvoice {

// Root of every error the library throws. Catch this at tool boundaries.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Input samples or values that are not usable (NaN, out of range).
class DataError : public Error {
 public:
  using Error::Error;
};

// A physical model evaluated outside its domain of validity.
class DomainError : public Error {
 public:
  using Error::Error;
};

class ArgumentError : public Error {
 public:
  using Error::Error;
};

// Malformed or unsupported file contents.
class FormatError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// FM deviation or IF too large for the IQ sample rate.
class AliasingError : public Error {
 public:
  using Error::Error;
};

// Spectrum of a CFO frame has no dominant component.
class NoCarrierError : public Error {
 public:
  using Error::Error;
};

// Non-finite loss, activation or gradient during training.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace rfvoice
