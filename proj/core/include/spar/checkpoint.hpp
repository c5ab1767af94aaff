#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "spar/parameter.hpp"
#include "spar/tensor.hpp"

namespace spar {

// Binary layout, all integers little-endian:
//   "SPAR" | version u32 | entry count u64 |
//   per entry: name length u64 | name bytes | rank u64 | dims u64 x rank |
//              values f64 x prod(dims)
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointEntry {
  std::string name;
  Tensor value;
};

std::string encode_checkpoint(const ParameterStore& store);
std::vector<CheckpointEntry> decode_checkpoint(const std::string& bytes);

void save_checkpoint(const ParameterStore& store, const std::string& path);
std::vector<CheckpointEntry> read_checkpoint(const std::string& path);

/// Copies every entry into the parameter of the same name. Unknown names,
/// parameters absent from the file and shape mismatches are errors.
void load_checkpoint(const std::string& path, ParameterStore& store);
void apply_checkpoint(const std::vector<CheckpointEntry>& entries, ParameterStore& store);

}  // namespace spar
