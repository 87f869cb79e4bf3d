#pragma once

#include <stdexcept>
#include <string>

namespace clipper {

// Error taxonomy shared across the library. The CLI maps these onto exit
// codes: config/contract -> 1, shape/numeric -> 2, io -> 3.
struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ContractError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace clipper
