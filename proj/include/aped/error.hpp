#pragma once

#include <stdexcept>
#include <string>

namespace aped {

// Every recoverable failure in the library surfaces as an aped::Error.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed or truncated on-disk data.
class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace aped
