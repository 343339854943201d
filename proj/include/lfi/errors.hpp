#pragma once

#include <stdexcept>
#include <string>

namespace lfi {

// Error taxonomy shared by every module. All of these derive from
// std::runtime_error so callers that do not care about the distinction can
// catch a single base.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct InvalidHyperparameterError : Error {
  using Error::Error;
};

struct InsufficientDataError : Error {
  using Error::Error;
};

struct DomainError : Error {
  using Error::Error;
};

struct ShapeError : Error {
  using Error::Error;
};

struct NumericalFailureError : Error {
  using Error::Error;
};

struct StateError : Error {
  using Error::Error;
};

struct InvalidMapError : Error {
  using Error::Error;
};

struct DegenerateVarianceError : Error {
  using Error::Error;
};

struct ConfigError : Error {
  using Error::Error;
};

struct SimulationError : Error {
  using Error::Error;
};

}  // namespace lfi
