#pragma once

#include <stdexcept>
#include <string>

namespace discup {

// Error taxonomy used across the workbench. All conditions that a caller can
// provoke map onto one of these; internal logic bugs use ContractViolation.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad values fed to an operation (empty corpus, alpha <= 0, NaN logits, ...).
struct InvalidInputError : Error {
  explicit InvalidInputError(const std::string& msg) : Error(msg) {}
};

// A documented precondition between components was broken (shape mismatch,
// non-scalar backward root, duplicate candidates, ...).
struct ContractViolation : Error {
  explicit ContractViolation(const std::string& msg) : Error(msg) {}
};

// Sequence does not fit the model context window.
struct LengthError : Error {
  explicit LengthError(const std::string& msg) : Error(msg) {}
};

// Corrupt, truncated or unsupported on-disk data.
struct FormatError : Error {
  explicit FormatError(const std::string& msg) : Error(msg) {}
};

// A checkpoint of one model kind was loaded where another was expected.
struct KindMismatchError : Error {
  explicit KindMismatchError(const std::string& msg) : Error(msg) {}
};

}  // namespace discup
