#include "spar/embedding.hpp"

#include <cmath>

#include "spar/errors.hpp"

namespace spar {

using ad::Tape;
using ad::Var;

TokenGrid::TokenGrid(std::size_t n, std::size_t m, std::size_t dx)
    : nodes(n), tokens(m), token_dim(dx), values({n * m, dx}), missing(n * m, 0) {}

std::size_t TokenGrid::present_count() const {
  std::size_t c = 0;
  for (auto f : missing) c += f ? 0 : 1;
  return c;
}

void TokenGrid::drop_node(std::size_t node) {
  require(node < nodes, "drop_node: node " + std::to_string(node) + " out of range");
  for (std::size_t j = 0; j < tokens; ++j) {
    missing[slot(node, j)] = 1;
    for (double& v : values.row(slot(node, j))) v = 0.0;
  }
}

void TokenGrid::validate() const {
  if (values.rank() != 2 || values.rows() != nodes * tokens || values.cols() != token_dim) {
    throw DimensionError("token grid values " + shape_string(values.shape()) + " do not match " +
                         std::to_string(nodes) + " nodes x " + std::to_string(tokens) + " tokens x " +
                         std::to_string(token_dim));
  }
  require(missing.size() == nodes * tokens, "token grid missing flags have the wrong length");
}

bool TokenGrid::padding_is_zero() const {
  for (std::size_t s = 0; s < slots(); ++s) {
    if (!missing[s]) continue;
    for (double v : values.row(s))
      if (v != 0.0) return false;
  }
  return true;
}

std::vector<double> NormalizedLayout::to_world(std::span<const double> point) const {
  std::vector<double> out(point.size());
  for (std::size_t j = 0; j < point.size(); ++j) out[j] = point[j] * scale + mean[j];
  return out;
}

std::vector<double> NormalizedLayout::to_normalized(std::span<const double> point) const {
  std::vector<double> out(point.size());
  for (std::size_t j = 0; j < point.size(); ++j) out[j] = (point[j] - mean[j]) / scale;
  return out;
}

NormalizedLayout normalize_layout(const Tensor& layout) {
  const std::size_t n = layout.rows(), ds = layout.cols();
  require(layout.rank() == 2 && n >= 1, "normalize_layout needs an [n x d_S] layout with n >= 1");
  require(all_finite(layout), "normalize_layout: non-finite coordinate");
  NormalizedLayout out;
  out.mean.assign(ds, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < ds; ++j) out.mean[j] += layout.at(i, j);
  for (double& m : out.mean) m /= static_cast<double>(n);
  out.coords = Tensor({n, ds});
  double ss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < ds; ++j) {
      const double c = layout.at(i, j) - out.mean[j];
      out.coords.at(i, j) = c;
      ss += c * c;
    }
  }
  double scale = std::sqrt(ss / static_cast<double>(n * ds));
  if (scale < 1e-9) scale = 1.0;
  out.scale = scale;
  for (double& v : out.coords.data()) v /= scale;
  return out;
}

RigidTransform sample_rigid_transform(std::size_t dim, Rng& rng, double half_range) {
  require(dim == 2 || dim == 3, "augmentation supports d_S of 2 or 3");
  constexpr double kTwoPi = 6.283185307179586476925286766559;
  RigidTransform t;
  t.angle = kTwoPi * uniform01(rng);
  for (std::size_t j = 0; j < dim; ++j) t.translation.push_back(uniform(rng, -half_range, half_range));
  return t;
}

std::vector<double> apply_rigid_transform(std::span<const double> point, const RigidTransform& t) {
  require(point.size() == t.translation.size(), "rigid transform dimension mismatch");
  require(point.size() >= 2, "rigid transform needs at least two coordinates");
  const double c = std::cos(t.angle), s = std::sin(t.angle);
  std::vector<double> out(point.begin(), point.end());
  out[0] = c * point[0] - s * point[1];
  out[1] = s * point[0] + c * point[1];
  for (std::size_t j = 0; j < out.size(); ++j) out[j] += t.translation[j];
  return out;
}

Tensor apply_rigid_transform(const Tensor& coords, const RigidTransform& t) {
  Tensor out(coords.shape());
  for (std::size_t i = 0; i < coords.rows(); ++i) {
    auto p = apply_rigid_transform(coords.row(i), t);
    std::copy(p.begin(), p.end(), out.row(i).begin());
  }
  return out;
}

Tensor augment_layout(const Tensor& normalized, Rng& rng) {
  return apply_rigid_transform(normalized, sample_rigid_transform(normalized.cols(), rng));
}

Linear make_linear(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
                   double init_std) {
  Tensor w({in, out});
  for (double& v : w.data()) v = normal(rng, 0.0, init_std);
  Linear l;
  l.weight = &store.create(name + ".weight", std::move(w));
  l.bias = &store.create(name + ".bias", Tensor({out}));
  l.in = in;
  l.out = out;
  return l;
}

Var apply_linear(Tape& tape, const Linear& layer, Var x) {
  if (x.cols() != layer.in) {
    throw ContractError("linear layer '" + layer.weight->name + "' expects input width " +
                        std::to_string(layer.in) + ", got " + shape_string(x.shape()));
  }
  return ad::add_bias(ad::matmul(x, tape.parameter(*layer.weight)), tape.parameter(*layer.bias));
}

Var embed_signals(Tape& tape, const Linear& layer, const TokenGrid& grid) {
  if (grid.token_dim != layer.in) {
    throw ContractError("signal embedding expects token dim " + std::to_string(layer.in) + ", got " +
                        std::to_string(grid.token_dim));
  }
  return apply_linear(tape, layer, tape.constant(grid.values));
}

Var embed_spatial(Tape& tape, const Linear& layer, const Tensor& layout, std::size_t tokens) {
  if (layout.cols() != layer.in) {
    throw ContractError("spatial embedding expects d_S = " + std::to_string(layer.in) + ", got " +
                        shape_string(layout.shape()));
  }
  return ad::repeat_rows(apply_linear(tape, layer, tape.constant(layout)), tokens);
}

Var embed_structural(Tape& tape, const Linear& layer, const StructuralTable& table,
                     std::span<const std::uint64_t> node_ids, std::size_t tokens,
                     const StructuralSubstitution* substitution) {
  std::vector<std::size_t> rows;
  rows.reserve(node_ids.size());
  for (std::uint64_t id : node_ids) {
    std::uint64_t row = id;
    if (substitution) {
      auto it = substitution->find(id);
      if (it != substitution->end()) row = it->second;
    }
    if (row >= table.identities()) {
      throw ContractError("unknown node identity " + std::to_string(id) + " (structural table has " +
                          std::to_string(table.identities()) + " rows) and no substitution");
    }
    rows.push_back(static_cast<std::size_t>(row));
  }
  Var r = ad::gather_rows(tape.parameter(*table.rows), rows);
  return ad::repeat_rows(apply_linear(tape, layer, r), tokens);
}

Tensor token_index_embedding(std::size_t tokens, std::size_t d) {
  Tensor out({tokens, d});
  for (std::size_t j = 0; j < tokens; ++j) {
    for (std::size_t c = 0; c < d; ++c) {
      const double freq = std::pow(10000.0, -static_cast<double>(2 * (c / 2)) / static_cast<double>(d));
      const double a = static_cast<double>(j) * freq;
      out.at(j, c) = (c % 2 == 0) ? std::sin(a) : std::cos(a);
    }
  }
  return out;
}

EmbeddedGrid combine(Var signal, Var spatial, Var structural, Var token_index) {
  EmbeddedGrid e{ad::Var{}, signal, spatial, structural, token_index};
  e.combined = ad::add(ad::add(ad::add(signal, spatial), structural), token_index);
  return e;
}

}  // namespace spar
