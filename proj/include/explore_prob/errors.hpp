#pragma once

#include <stdexcept>
#include <string>

namespace explore_prob {

/// Malformed model, spec or argument.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// An iterative solver did not reach its tolerance within the iteration cap.
class ConvergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A requested enumeration is larger than the configured cap.
class SizeError : public std::length_error {
 public:
  using std::length_error::length_error;
};

/// Bad experiment configuration (CLI exit code 2).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace explore_prob
