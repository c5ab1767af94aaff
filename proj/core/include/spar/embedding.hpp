#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "spar/autodiff.hpp"
#include "spar/parameter.hpp"
#include "spar/rng.hpp"
#include "spar/tensor.hpp"

namespace spar {

/// Tokenized signals of one modality. Slot (i, j) is row i*tokens + j of
/// `values`. Missing slots hold zeros.
struct TokenGrid {
  std::size_t nodes = 0;
  std::size_t tokens = 0;
  std::size_t token_dim = 0;
  Tensor values;                      // [(nodes*tokens) x token_dim]
  std::vector<std::uint8_t> missing;  // nodes*tokens flags, 1 = absent

  TokenGrid() = default;
  TokenGrid(std::size_t nodes, std::size_t tokens, std::size_t token_dim);

  std::size_t slots() const { return nodes * tokens; }
  std::size_t slot(std::size_t node, std::size_t token) const { return node * tokens + token; }
  bool is_missing(std::size_t node, std::size_t token) const { return missing[slot(node, token)] != 0; }
  std::size_t present_count() const;

  // Flags every token of `node` missing and zeroes its values.
  void drop_node(std::size_t node);
  void validate() const;
  // Missing slots must hold zeros. Data producers guarantee this; the model
  // never reads those values, so it is checked only where data enters.
  bool padding_is_zero() const;
};

struct NormalizedLayout {
  Tensor coords;              // [n x d_S]
  std::vector<double> mean;   // d_S
  double scale = 1.0;

  // Maps a point from normalized units back to meters.
  std::vector<double> to_world(std::span<const double> point) const;
  std::vector<double> to_normalized(std::span<const double> point) const;
};

/// Centers on the column means and divides by one isotropic scale,
/// sqrt(sum ||c_i||^2 / (n * d_S)). A scale below 1e-9 (all nodes coincide)
/// falls back to 1.
NormalizedLayout normalize_layout(const Tensor& layout);

struct RigidTransform {
  double angle = 0.0;
  std::vector<double> translation;
};

// angle ~ U[0, 2pi), translation ~ U[-half_range, half_range] per dimension.
RigidTransform sample_rigid_transform(std::size_t dim, Rng& rng, double half_range = 0.5);

// Rotates in the first two coordinates (about the vertical axis when
// d_S = 3), then translates.
Tensor apply_rigid_transform(const Tensor& coords, const RigidTransform& transform);
std::vector<double> apply_rigid_transform(std::span<const double> point, const RigidTransform& transform);

Tensor augment_layout(const Tensor& normalized, Rng& rng);

/// Affine map x W + b applied row-wise.
struct Linear {
  Parameter* weight = nullptr;  // [in x out]
  Parameter* bias = nullptr;    // [out]
  std::size_t in = 0;
  std::size_t out = 0;
};

Linear make_linear(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
                   double init_std);
ad::Var apply_linear(ad::Tape& tape, const Linear& layer, ad::Var x);

/// Learnable structural vectors, one row per persistent node identity.
struct StructuralTable {
  Parameter* rows = nullptr;  // [identities x d_R]

  std::size_t identities() const { return rows->value.rows(); }
  std::size_t dim() const { return rows->value.cols(); }
};

// Node identity -> identity whose learned row stands in for it.
using StructuralSubstitution = std::unordered_map<std::uint64_t, std::uint64_t>;

// Per-token affine embedding of the grid -> [(n*m) x d].
ad::Var embed_signals(ad::Tape& tape, const Linear& layer, const TokenGrid& grid);

// Embeds each node's position and broadcasts it over `tokens` -> [(n*m) x d].
ad::Var embed_spatial(ad::Tape& tape, const Linear& layer, const Tensor& layout, std::size_t tokens);

/// Looks up each node's structural row, projects it to width d and
/// broadcasts over `tokens`. Ids outside the table must appear in
/// `substitution`; a substituted id uses the row it maps to.
ad::Var embed_structural(ad::Tape& tape, const Linear& layer, const StructuralTable& table,
                         std::span<const std::uint64_t> node_ids, std::size_t tokens,
                         const StructuralSubstitution* substitution = nullptr);

// Fixed sinusoidal embedding of the token index, [tokens x d].
Tensor token_index_embedding(std::size_t tokens, std::size_t d);

/// Combined embedding E = signal + spatial + structural + token_index, with
/// the addends kept so decoders can rebuild placeholders from a subset.
struct EmbeddedGrid {
  ad::Var combined;
  ad::Var signal;
  ad::Var spatial;
  ad::Var structural;
  ad::Var token_index;
};

EmbeddedGrid combine(ad::Var signal, ad::Var spatial, ad::Var structural, ad::Var token_index);

}  // namespace spar
