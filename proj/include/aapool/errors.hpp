#pragma once

#include <stdexcept>
#include <string>

namespace aapool {

// Shape or rank mismatch between operands.
struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// An operation was invoked outside its contract (e.g. backward on a non-scalar).
struct ContractError : std::logic_error {
  using std::logic_error::logic_error;
};

struct ArgumentError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Malformed file or stream contents.
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Non-finite loss during optimization.
struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Input does not satisfy a shift protocol's constraints.
struct IneligibleError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace aapool
