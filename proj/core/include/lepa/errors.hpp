#pragma once

#include <stdexcept>
#include <string>

namespace lepa {

// Error categories map 1:1 onto CLI exit codes:
//   ConfigError -> 3, IoError -> 4, NumericError -> 5.
// Usage errors (exit 2) are produced by the argument parser directly.

class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace lepa
