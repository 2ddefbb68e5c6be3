#pragma once

#include <iostream>
#include <stdexcept>
#include <string>

namespace octchange {

// All recoverable failures in the library are reported with this type.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Thrown by the pipeline when automatic registration failed its vessel-overlap
// check and manual landmarks are required before the run can continue.
class NeedsManualRegistration : public Error {
 public:
  using Error::Error;
};

inline void warn(const std::string& msg) { std::clog << "[octchange] warning: " << msg << '\n'; }

}  // namespace octchange
