#pragma once

#include <stdexcept>
#include <string>

namespace lat {

/// Operand shapes are incompatible for the requested operation.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A caller broke an operation's precondition (non-scalar loss, non-square
/// similarity matrix, empty rank list, ...).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Invalid hyper-parameter or model configuration.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A vector whose norm is too small to normalize.
class DegenerateVectorError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Non-finite values or a failed numerical procedure.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace lat
