#pragma once

#include <stdexcept>
#include <string>

namespace mixrag {

// Base of every error raised by the library. Subclasses map to the error
// categories used across modules and to CLI exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error { using Error::Error; };
class ParameterError : public Error { using Error::Error; };
class ContractError : public Error { using Error::Error; };
class RangeError : public Error { using Error::Error; };

// Data errors: malformed or inconsistent input files.
class DataError : public Error { using Error::Error; };
class FormatError : public DataError { using DataError::DataError; };
class ReferentialIntegrityError : public DataError { using DataError::DataError; };
class CoverageError : public DataError { using DataError::DataError; };

// Generation backend failures.
class BackendError : public Error { using Error::Error; };
class TransportError : public BackendError {
 public:
  TransportError(const std::string& what, int status) : BackendError(what), status_(status) {}
  int status() const { return status_; }

 private:
  int status_;
};
class TimeoutError : public BackendError { using BackendError::BackendError; };
class ProtocolError : public BackendError { using BackendError::BackendError; };

// Training diverged.
class NumericError : public Error { using Error::Error; };

}  // namespace mixrag
