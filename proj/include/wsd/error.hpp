#pragma once

#include <stdexcept>
#include <string>

namespace wsd {

/// Base of every error raised by the library. The C API maps each subclass
/// onto a wsd_status code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Malformed file content: bad magic, truncation, unparsable record.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values surfaced during training or inference.
class NumericError : public Error {
 public:
  using Error::Error;
};

class NotFound : public Error {
 public:
  using Error::Error;
};

}  // namespace wsd
