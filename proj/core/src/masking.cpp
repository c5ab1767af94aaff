#include "spar/masking.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "spar/embedding.hpp"
#include "spar/errors.hpp"

namespace spar {

namespace {

TokenMask empty_mask(const TokenGrid& grid, double ratio) {
  grid.validate();
  TokenMask m;
  m.nodes = grid.nodes;
  m.tokens = grid.tokens;
  m.visible.assign(grid.slots(), 0);
  m.missing = grid.missing;
  m.ratio = ratio;
  return m;
}

// Partial Fisher-Yates: first k entries become a uniform k-subset.
void choose_prefix(std::vector<std::size_t>& items, std::size_t k, Rng& rng) {
  for (std::size_t i = 0; i < k && i < items.size(); ++i) {
    const std::size_t j = i + uniform_index(rng, items.size() - i);
    std::swap(items[i], items[j]);
  }
}

}  // namespace

std::size_t TokenMask::visible_count() const {
  return static_cast<std::size_t>(std::count(visible.begin(), visible.end(), 1));
}

std::size_t TokenMask::hidden_count() const {
  std::size_t c = 0;
  for (std::size_t s = 0; s < slots(); ++s) c += is_hidden(s) ? 1 : 0;
  return c;
}

std::vector<std::size_t> TokenMask::visible_slots() const {
  std::vector<std::size_t> out;
  for (std::size_t s = 0; s < slots(); ++s)
    if (visible[s]) out.push_back(s);
  return out;
}

std::vector<std::size_t> TokenMask::hidden_slots() const {
  std::vector<std::size_t> out;
  for (std::size_t s = 0; s < slots(); ++s)
    if (is_hidden(s)) out.push_back(s);
  return out;
}

std::vector<std::uint8_t> TokenMask::present() const {
  std::vector<std::uint8_t> out(slots());
  for (std::size_t s = 0; s < slots(); ++s) out[s] = missing[s] ? 0 : 1;
  return out;
}

const char* to_string(MaskStrategy s) {
  switch (s) {
    case MaskStrategy::Random: return "random";
    case MaskStrategy::NodeBalanced: return "node-balanced";
    case MaskStrategy::NodeDrop: return "node-drop";
  }
  return "?";
}

MaskStrategy mask_strategy_from_string(const std::string& s) {
  if (s == "random") return MaskStrategy::Random;
  if (s == "node-balanced") return MaskStrategy::NodeBalanced;
  if (s == "node-drop") return MaskStrategy::NodeDrop;
  throw ContractError("unknown mask strategy '" + s + "' (expected random, node-balanced or node-drop)");
}

std::size_t target_visible_count(std::size_t present, double ratio) {
  const auto raw = static_cast<std::size_t>(std::llround((1.0 - ratio) * static_cast<double>(present)));
  return std::clamp<std::size_t>(raw, 1, present);
}

TokenMask random_mask(const TokenGrid& grid, double ratio, Rng& rng) {
  require(ratio > 0.0 && ratio < 1.0, "mask ratio must lie in (0, 1), got " + std::to_string(ratio));
  TokenMask m = empty_mask(grid, ratio);
  std::vector<std::size_t> candidates;
  for (std::size_t s = 0; s < grid.slots(); ++s)
    if (!grid.missing[s]) candidates.push_back(s);
  require(!candidates.empty(), "random_mask: every token is missing");
  const std::size_t k = target_visible_count(candidates.size(), ratio);
  choose_prefix(candidates, k, rng);
  for (std::size_t i = 0; i < k; ++i) m.visible[candidates[i]] = 1;
  return m;
}

TokenMask node_balanced_mask(const TokenGrid& grid, double ratio, std::size_t min_visible, Rng& rng) {
  require(ratio > 0.0 && ratio < 1.0, "mask ratio must lie in (0, 1), got " + std::to_string(ratio));
  TokenMask m = empty_mask(grid, ratio);
  const std::size_t present = grid.present_count();
  require(present > 0, "node_balanced_mask: every token is missing");
  const std::size_t target = target_visible_count(present, ratio);

  std::size_t reserved = 0;
  for (std::size_t i = 0; i < grid.nodes; ++i) {
    std::vector<std::size_t> own;
    for (std::size_t j = 0; j < grid.tokens; ++j)
      if (!grid.is_missing(i, j)) own.push_back(grid.slot(i, j));
    const std::size_t take = std::min(min_visible, own.size());
    reserved += take;
    if (reserved > target) {
      throw ContractError("node_balanced_mask: minimum of " + std::to_string(min_visible) +
                          " visible tokens per node is infeasible at node " + std::to_string(i) + " (only " +
                          std::to_string(target) + " visible tokens in total)");
    }
    choose_prefix(own, take, rng);
    for (std::size_t k = 0; k < take; ++k) m.visible[own[k]] = 1;
  }

  std::vector<std::size_t> rest;
  for (std::size_t s = 0; s < grid.slots(); ++s)
    if (!grid.missing[s] && !m.visible[s]) rest.push_back(s);
  const std::size_t fill = target - reserved;
  choose_prefix(rest, fill, rng);
  for (std::size_t k = 0; k < fill; ++k) m.visible[rest[k]] = 1;
  return m;
}

TokenMask node_drop_mask(const TokenGrid& grid, std::size_t drop_count, Rng& rng) {
  require(drop_count > 0 && drop_count < grid.nodes,
          "node_drop_mask: drop count " + std::to_string(drop_count) + " must lie in (0, " +
              std::to_string(grid.nodes) + ")");
  TokenMask m = empty_mask(grid, static_cast<double>(drop_count) / static_cast<double>(grid.nodes));
  std::vector<std::size_t> order(grid.nodes);
  std::iota(order.begin(), order.end(), 0);
  choose_prefix(order, drop_count, rng);
  std::vector<std::uint8_t> dropped(grid.nodes, 0);
  for (std::size_t k = 0; k < drop_count; ++k) dropped[order[k]] = 1;
  for (std::size_t i = 0; i < grid.nodes; ++i) {
    if (dropped[i]) continue;
    for (std::size_t j = 0; j < grid.tokens; ++j)
      if (!grid.is_missing(i, j)) m.visible[grid.slot(i, j)] = 1;
  }
  require(m.visible_count() > 0, "node_drop_mask: no present token survives the drop");
  return m;
}

TokenMask full_visibility(const TokenGrid& grid) {
  TokenMask m = empty_mask(grid, 0.0);
  for (std::size_t s = 0; s < grid.slots(); ++s) m.visible[s] = grid.missing[s] ? 0 : 1;
  return m;
}

TokenMask complement(const TokenMask& mask) {
  TokenMask out = mask;
  out.ratio = 1.0 - mask.ratio;
  for (std::size_t s = 0; s < mask.slots(); ++s) out.visible[s] = mask.is_hidden(s) ? 1 : 0;
  return out;
}

Gathered gather_visible(const Tensor& grid_rows, const TokenMask& mask) {
  if (grid_rows.rows() != mask.slots()) {
    throw DimensionError("gather_visible: grid has " + std::to_string(grid_rows.rows()) + " rows, mask has " +
                         std::to_string(mask.slots()) + " slots");
  }
  Gathered g;
  g.slots = mask.visible_slots();
  require(!g.slots.empty(), "gather_visible: mask has no visible slot");
  const std::size_t c = grid_rows.cols();
  g.sequence = Tensor({g.slots.size(), c});
  for (std::size_t r = 0; r < g.slots.size(); ++r) {
    auto src = grid_rows.row(g.slots[r]);
    std::copy(src.begin(), src.end(), g.sequence.row(r).begin());
  }
  return g;
}

Tensor scatter(const Tensor& sequence, std::span<const std::size_t> slots, std::size_t total_slots, double fill) {
  if (sequence.rows() != slots.size()) {
    throw DimensionError("scatter: " + std::to_string(sequence.rows()) + " rows for " +
                         std::to_string(slots.size()) + " slots");
  }
  Tensor out({total_slots, sequence.cols()}, fill);
  for (std::size_t r = 0; r < slots.size(); ++r) {
    if (slots[r] >= total_slots) throw DimensionError("scatter: slot index out of range");
    auto src = sequence.row(r);
    std::copy(src.begin(), src.end(), out.row(slots[r]).begin());
  }
  return out;
}

}  // namespace spar
