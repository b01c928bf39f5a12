#pragma once

#include <stdexcept>
#include <string>
#include <type_traits>

namespace mocha {

// Precondition or shape violation by the caller.
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Malformed input files, checkpoints or configs.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite loss or similar numerical breakdown.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require(bool cond, const char* what) {
  if (!cond) throw ContractViolation(what);
}

inline void require(bool cond, const std::string& what) {
  if (!cond) throw ContractViolation(what);
}

// The message is only built when the check fails.
template <typename F>
  requires std::is_invocable_r_v<std::string, F>
inline void require(bool cond, F&& what) {
  if (!cond) throw ContractViolation(what());
}

}  // namespace mocha
