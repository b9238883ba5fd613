#pragma once

#include <stdexcept>
#include <string>

namespace ecgxai {

/// Violated precondition of an operation (bad shapes, out-of-range indices).
class ContractError : public std::invalid_argument {
 public:
  explicit ContractError(const std::string& what) : std::invalid_argument(what) {}
};

/// Input data that cannot be processed (non-finite samples, malformed rows).
class InvalidInputError : public std::runtime_error {
 public:
  explicit InvalidInputError(const std::string& what) : std::runtime_error(what) {}
};

/// Signal with no variation where a scale is required.
class DegenerateSignalError : public std::runtime_error {
 public:
  explicit DegenerateSignalError(const std::string& what) : std::runtime_error(what) {}
};

/// Training produced a non-finite loss.
class DivergenceError : public std::runtime_error {
 public:
  explicit DivergenceError(const std::string& what) : std::runtime_error(what) {}
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw ContractError(msg);
}

}  // namespace ecgxai
