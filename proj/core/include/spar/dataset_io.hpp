#pragma once

#include <cstdint>
#include <string>

#include "spar/synth.hpp"

namespace spar {

// Binary layout, integers u64 and floats f64, little-endian:
//   "SPDS" | version u32 | samples | modalities | spatial dim | classes |
//   layout pool | per modality: nodes, tokens, token dim |
//   per sample: seed, scene, class, source position (d_S f64),
//     per modality: node ids (n u64), layout (n*d_S f64),
//                   missing flags (n*m u64), token values (n*m*d_X f64),
//                   node energy (n f64)
inline constexpr std::uint32_t kDatasetVersion = 1;

std::string encode_dataset(const Dataset& data);
Dataset decode_dataset(const std::string& bytes);

void save_dataset(const Dataset& data, const std::string& path);
Dataset load_dataset(const std::string& path);

}  // namespace spar
