#pragma once

#include <stdexcept>
#include <string>

namespace fellrec {

// Precondition or shape violation in an operation's inputs.
class ContractViolation : public std::invalid_argument {
 public:
  explicit ContractViolation(const std::string& what) : std::invalid_argument(what) {}
};

// Non-finite values, zero norms, and similar numeric failures.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

// Unknown item id, missing checkpoint, and similar lookups.
class NotFoundError : public std::runtime_error {
 public:
  explicit NotFoundError(const std::string& what) : std::runtime_error(what) {}
};

class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

// Experiment configuration rejected before any work starts (CLI exit code 2).
class ConfigError : public std::invalid_argument {
 public:
  explicit ConfigError(const std::string& what) : std::invalid_argument(what) {}
};

// Warnings go to stderr; they never alter results.
void log_warning(const std::string& message);

}  // namespace fellrec
