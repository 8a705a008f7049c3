#pragma once

#include <stdexcept>
#include <string>

namespace pivotkit {

/// Raised for malformed inputs, violated preconditions and format mismatches.
/// Messages are single-line so the CLI can print them verbatim.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace pivotkit
