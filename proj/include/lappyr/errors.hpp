#pragma once

#include <stdexcept>
#include <string>

namespace lappyr {

// Bad external input: missing/malformed files, inconsistent manifests.
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

// Numerical failure: non-finite loss or gradient, failed gradient check.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace lappyr
