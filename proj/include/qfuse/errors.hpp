#pragma once

#include <stdexcept>
#include <string>

namespace qfuse {

// Shape or extent disagreement between operands.
class DimensionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid configuration value or unknown key.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Caller violated an operation precondition.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// A non-finite value showed up where finite values are required.
class ValidityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace qfuse
