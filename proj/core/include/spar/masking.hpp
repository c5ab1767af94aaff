#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "spar/rng.hpp"
#include "spar/tensor.hpp"

namespace spar {

struct TokenGrid;

/// Visibility over the n x m slots of one modality. A slot is visible,
/// hidden (a reconstruction target) or missing; the three are disjoint.
struct TokenMask {
  std::size_t nodes = 0;
  std::size_t tokens = 0;
  std::vector<std::uint8_t> visible;  // 1 = fed to the encoder
  std::vector<std::uint8_t> missing;  // copied from the grid
  double ratio = 0.0;

  std::size_t slots() const { return nodes * tokens; }
  bool is_hidden(std::size_t slot) const { return !visible[slot] && !missing[slot]; }
  std::size_t visible_count() const;
  std::size_t hidden_count() const;
  std::vector<std::size_t> visible_slots() const;
  std::vector<std::size_t> hidden_slots() const;
  std::vector<std::uint8_t> present() const;
  bool operator==(const TokenMask&) const = default;
};

enum class MaskStrategy { Random, NodeBalanced, NodeDrop };

const char* to_string(MaskStrategy s);
MaskStrategy mask_strategy_from_string(const std::string& s);

// round((1 - ratio) * present), clamped to [1, present].
std::size_t target_visible_count(std::size_t present, double ratio);

TokenMask random_mask(const TokenGrid& grid, double ratio, Rng& rng);
TokenMask node_balanced_mask(const TokenGrid& grid, double ratio, std::size_t min_visible_per_node, Rng& rng);
TokenMask node_drop_mask(const TokenGrid& grid, std::size_t drop_count, Rng& rng);
// Every present slot visible.
TokenMask full_visibility(const TokenGrid& grid);

// Visible <-> hidden over present slots; missing slots stay missing.
TokenMask complement(const TokenMask& mask);

struct Gathered {
  Tensor sequence;                  // [visible x cols]
  std::vector<std::size_t> slots;  // source slot per row, row-major order
};

Gathered gather_visible(const Tensor& grid_rows, const TokenMask& mask);
Tensor scatter(const Tensor& sequence, std::span<const std::size_t> slots, std::size_t total_slots, double fill);

}  // namespace spar
