#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace ternkit {

// Shape or dimension disagreement between operands.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A caller violated a documented precondition.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Masked loss with no supervised position.
class EmptySupervisionError : public std::invalid_argument {
 public:
  EmptySupervisionError() : std::invalid_argument("empty supervision: mask selects no positions") {}
};

// Packed ternary bytes containing the reserved 0b10 code.
class CorruptionError : public std::runtime_error {
 public:
  CorruptionError(std::size_t byte_offset, const std::string& what)
      : std::runtime_error(what), byte_offset_(byte_offset) {}
  std::size_t byte_offset() const noexcept { return byte_offset_; }

 private:
  std::size_t byte_offset_;
};

// Base for all on-disk format problems (checkpoints, datasets, reports).
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class VersionError : public FormatError {
 public:
  using FormatError::FormatError;
};

class TruncatedError : public FormatError {
 public:
  using FormatError::FormatError;
};

class UnknownBlobError : public FormatError {
 public:
  using FormatError::FormatError;
};

// Loss or parameter became NaN/Inf during training.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Config file failed schema validation; one message per offending field.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(std::vector<std::string> problems);
  const std::vector<std::string>& problems() const noexcept { return problems_; }

 private:
  std::vector<std::string> problems_;
};

}  // namespace ternkit
