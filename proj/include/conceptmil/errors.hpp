#pragma once

#include <stdexcept>

namespace conceptmil {

// Operand shapes disagree; the message names both shapes.
class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite values appeared where finite ones are required.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Structurally valid but unusable input: zero-norm rows, empty bags,
// empty token sequences.
class DegenerateInputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// API misuse: non-scalar loss, backward re-entry, reading gradients
// before backward.
class ContractError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// File contents do not match the expected format.
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Parsed structures violate semantic invariants.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Run configuration out of range.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Filesystem failure.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace conceptmil
