#ifndef DPL_ERRORS_H_
#define DPL_ERRORS_H_

#include <stdexcept>
#include <string>

namespace dpl {

// Invalid hyperparameters, flags or mismatched artifacts. CLI exit code 1.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Unreadable or malformed input data. CLI exit code 2.
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

// A numerical kernel received an argument outside its domain
// (non-finite score, empty sample list, zero tau_minus).
class DomainError : public std::domain_error {
 public:
  explicit DomainError(const std::string& what) : std::domain_error(what) {}
};

}  // namespace dpl

#endif  // DPL_ERRORS_H_
