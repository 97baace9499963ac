#pragma once

#include <stdexcept>
#include <string>

namespace sms {

// Base class for all engine errors.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Invalid argument passed to an operation (bad dimensions, empty input, ...).
class ArgumentError : public Error {
 public:
  using Error::Error;
};

// Malformed on-disk artifact (bad magic, version, truncated payload).
class FormatError : public Error {
 public:
  using Error::Error;
};

// Structurally valid file whose contents violate a data invariant.
class DataError : public Error {
 public:
  using Error::Error;
};

// Filesystem-level failure.
class IoError : public Error {
 public:
  using Error::Error;
};

// Remote oracle child died or closed its pipe.
class OracleUnavailable : public Error {
 public:
  using Error::Error;
};

// Remote oracle spoke, but not the protocol.
class ProtocolError : public Error {
 public:
  using Error::Error;
};

// Evaluation budget too small to do any work.
class BudgetError : public Error {
 public:
  using Error::Error;
};

// Brute-force instance exceeds the enumeration cap.
class CapacityError : public Error {
 public:
  using Error::Error;
};

// Training produced a non-finite loss.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace sms
