#include "spar/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

#include "spar/errors.hpp"
#include "spar/rng.hpp"

namespace spar {

double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1e-8, std::abs(analytic) + std::abs(numeric));
}

namespace {

double evaluate(const Objective& objective) {
  ad::Tape tape;
  return objective(tape).value().item();
}

}  // namespace

GradCheckResult grad_check(const Objective& objective, std::span<Parameter* const> params,
                           const GradCheckOptions& options) {
  GradCheckResult result;
  if (params.empty()) throw ContractError("grad_check: no parameters");

  for (Parameter* p : params) p->zero_grad();
  {
    ad::Tape tape;
    ad::Var loss = objective(tape);
    if (!std::isfinite(loss.value().item())) {
      result.ok = false;
      result.failure = "objective is not finite at the base point";
      return result;
    }
    tape.backward(loss);
  }

  std::size_t total = 0;
  for (Parameter* p : params) total += p->value.size();

  // (parameter, flat index) pairs to probe.
  std::vector<std::pair<std::size_t, std::size_t>> coords;
  if (total <= options.min_coordinates) {
    for (std::size_t k = 0; k < params.size(); ++k)
      for (std::size_t i = 0; i < params[k]->value.size(); ++i) coords.emplace_back(k, i);
  } else {
    Rng rng(options.seed);
    const std::size_t per_param =
        std::max<std::size_t>(1, (options.min_coordinates + params.size() - 1) / params.size());
    for (std::size_t k = 0; k < params.size(); ++k) {
      const std::size_t n = params[k]->value.size();
      if (n <= per_param) {
        for (std::size_t i = 0; i < n; ++i) coords.emplace_back(k, i);
      } else {
        for (std::size_t s = 0; s < per_param; ++s) coords.emplace_back(k, uniform_index(rng, n));
      }
    }
  }

  const double h = options.step;
  for (auto [k, i] : coords) {
    Parameter& p = *params[k];
    const double original = p.value[i];
    p.value[i] = original + h;
    const double up = evaluate(objective);
    p.value[i] = original - h;
    const double down = evaluate(objective);
    p.value[i] = original;
    ++result.coordinates_checked;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      result.ok = false;
      result.failure = "non-finite objective at " + p.name + "[" + std::to_string(i) + "]";
      result.worst_parameter = p.name;
      result.worst_index = i;
      return result;
    }
    const double numeric = (up - down) / (2.0 * h);
    const double err = relative_error(p.grad[i], numeric);
    if (err > result.max_relative_error || result.worst_parameter.empty()) {
      result.max_relative_error = std::max(result.max_relative_error, err);
      result.worst_parameter = p.name;
      result.worst_index = i;
    }
  }
  for (Parameter* p : params) p->zero_grad();
  return result;
}

}  // namespace spar
