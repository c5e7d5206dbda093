#pragma once

#include <stdexcept>
#include <string>

namespace puma {

// Runtime failure inside the library (bad data, singular systems, ...).
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Invalid configuration or arguments; the CLI maps this to exit code 2.
class ConfigError : public Error {
public:
  using Error::Error;
};

}  // namespace puma
