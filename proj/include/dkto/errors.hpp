// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace dkto {

// Bad configuration values, mismatched architectures or schedules.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// An operation was called outside its precondition.
struct UsageError : std::logic_error {
  using std::logic_error::logic_error;
};

// Non-finite loss, gradient or parameter encountered during training.
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed input file; `line` is 1-based.
struct ParseError : std::runtime_error {
  ParseError(const std::string& path, std::size_t line, const std::string& what)
      : std::runtime_error(path + ":" + std::to_string(line) + ": " + what), line(line) {}
  std::size_t line;
};

}  // namespace dkto
