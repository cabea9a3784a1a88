#pragma once

#include <stdexcept>
#include <string>

namespace rapkit {

// Thrown on malformed data passed into an operation (shapes, labels, files).
struct InvalidInput : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Thrown when a configuration value violates its documented range.
struct InvalidConfig : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Thrown when a handle lacks a required capability (e.g. gradients on a
// forward-only remote classifier).
struct CapabilityError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Non-finite values where finite ones are required.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed remote responses or exhausted retries.
struct ProtocolError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Training did not reach the documented accuracy floor.
struct TrainingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace rapkit
