#pragma once

#include <stdexcept>
#include <string>

namespace triglab {

/// Raised when a caller breaks an operation's precondition (shape mismatch,
/// out-of-range index, malformed intervention, ...).
class ContractViolation : public std::invalid_argument {
 public:
  explicit ContractViolation(const std::string& what) : std::invalid_argument(what) {}
};

/// Model or corpus file could not be read, parsed, or verified.
class ModelIoError : public std::runtime_error {
 public:
  explicit ModelIoError(const std::string& what) : std::runtime_error(what) {}
};

/// Training produced a non-finite loss.
class TrainingDiverged : public std::runtime_error {
 public:
  explicit TrainingDiverged(const std::string& what) : std::runtime_error(what) {}
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw ContractViolation(msg);
}

}  // namespace triglab
