#pragma once

#include <stdexcept>
#include <string>

namespace peloton {

// Exit-code contract used by the CLI: 0 success, 1 validation error,
// 2 I/O error, 3 numeric non-convergence.
class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

class ConvergenceError : public std::runtime_error {
 public:
  explicit ConvergenceError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace peloton
