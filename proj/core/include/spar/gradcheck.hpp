#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>

#include "spar/autodiff.hpp"
#include "spar/parameter.hpp"

namespace spar {

struct GradCheckOptions {
  double step = 1e-5;
  std::size_t min_coordinates = 64;
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t coordinates_checked = 0;
  // Parameter and flat index of the worst coordinate, or of the first
  // non-finite evaluation when `ok` is false.
  std::string worst_parameter;
  std::size_t worst_index = 0;
  bool ok = true;
  std::string failure;
};

// Builds the scalar objective on a fresh tape. Must be deterministic in the
// parameter values.
using Objective = std::function<ad::Var(ad::Tape&)>;

/// Compares reverse-mode gradients with central differences
/// (f(x+h) - f(x-h)) / 2h on a sampled subset of coordinates: every
/// coordinate when the total is at most `min_coordinates`, otherwise at
/// least `min_coordinates` spread across all parameters. The error per
/// coordinate is |a - n| / max(1e-8, |a| + |n|).
GradCheckResult grad_check(const Objective& objective, std::span<Parameter* const> params,
                           const GradCheckOptions& options = {});

double relative_error(double analytic, double numeric);

}  // namespace spar
