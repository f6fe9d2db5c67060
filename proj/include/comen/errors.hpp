#pragma once

#include <stdexcept>
#include <string>

namespace comen {

// Operand shapes do not conform for the requested op.
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Input outside the mathematical domain of an op (log/sqrt of a negative).
struct DomainError : std::domain_error {
  using std::domain_error::domain_error;
};

// Misuse of the reverse pass: non-scalar loss or a detached tensor.
struct GradError : std::logic_error {
  using std::logic_error::logic_error;
};

struct InsufficientBatchError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct ClusteringError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A training loss became NaN or infinite.
struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Binary file errors (dataset bundles and checkpoints).
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct MalformedHeaderError : FormatError {
  using FormatError::FormatError;
};

struct ChecksumError : FormatError {
  using FormatError::FormatError;
};

// A file that ends before its declared payload is an integrity failure.
struct TruncatedPayloadError : ChecksumError {
  using ChecksumError::ChecksumError;
};

}  // namespace comen
