#pragma once

#include <stdexcept>
#include <string>

namespace vvcrl {

/// A caller broke a documented precondition (wrong shape, stepping a finished
/// episode, sampling an under-filled buffer, ...).
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Input data that cannot describe a valid model (bad branch, non-radial
/// topology, unconverged solution passed where a converged one is needed).
class InvalidInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Configuration or file-schema problem. Carries an optional location so the
/// CLI can point at the offending line or field.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what, std::string where = {})
      : std::runtime_error(where.empty() ? what : where + ": " + what), where_(std::move(where)) {}
  const std::string& where() const noexcept { return where_; }

 private:
  std::string where_;
};

/// Non-finite loss or gradient during training.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require(bool condition, const char* message) {
  if (!condition) throw ContractViolation(message);
}

}  // namespace vvcrl
