#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace spar {

// Violated precondition or postcondition of a public operation.
class ContractError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor extents that do not line up.
class DimensionError : public ContractError {
 public:
  using ContractError::ContractError;
};

// Malformed or truncated binary file. Carries the byte offset where
// decoding failed.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

inline void require(bool condition, const std::string& message) {
  if (!condition) throw ContractError(message);
}

}  // namespace spar
