#pragma once

#include <stdexcept>
#include <string>

namespace coupled {

// Argument outside the mathematical domain of a function (x <= 0 for a
// logarithm, non-SPD scale matrix, ...).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// An integral or expectation that does not converge.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Caller broke an API contract: shape mismatch, non-scalar loss, reuse of a
// consumed tape.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Malformed file contents (bad magic, truncated payload).
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad experiment configuration: unknown key, unparsable value, missing file.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace coupled
