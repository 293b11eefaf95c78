#pragma once

#include <stdexcept>
#include <string>

namespace sweettok {

// Exit-code contract for the command line: 2 validation, 3 I/O, 4 numeric.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace sweettok
