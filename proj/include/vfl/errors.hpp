#pragma once

#include <stdexcept>
#include <string>

namespace vfl {

// Dimension disagreement between operands.
struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Argument outside its mathematical domain (non-positive scale, rho <= 0, ...).
struct DomainError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Non-finite value where the numeric contract requires finiteness.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed or infeasible run configuration.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Client/server contract violation: missing or mismatched message.
struct ProtocolError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace vfl
