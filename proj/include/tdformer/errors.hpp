#pragma once

#include <stdexcept>
#include <string>

namespace tdformer {

// Shape or extent mismatch between operands.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Invalid hyperparameters, configuration files or schedules.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Argument outside the mathematical domain of an analysis routine.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Non-finite values, divergence, or use of uninitialized statistics.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace tdformer
