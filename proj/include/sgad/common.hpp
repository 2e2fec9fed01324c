#pragma once

#include <stdexcept>
#include <string>

namespace sgad {

inline constexpr const char* kCodeVersion = "sgad-0.1.0";

// Invalid network/experiment configuration.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Tensor shape / graph wiring violations.
struct StructuralError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Argument outside its mathematical domain (labels, variance range, ...).
struct DomainError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed or truncated input data files.
struct IngestionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Non-finite values reaching the optimizer.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace sgad
