#pragma once

#include <cstddef>
#include <limits>
#include <span>
#include <vector>

namespace spar {

struct Metrics {
  static constexpr double kUnset = std::numeric_limits<double>::quiet_NaN();

  double mse = kUnset;       // mean over samples and coordinates of squared error, task units^2
  double dist_err = kUnset;  // mean Euclidean distance, task units
  double accuracy = kUnset;
  double macro_f1 = kUnset;
  std::size_t count = 0;
};

// Rows of `predicted` and `truth` are points in task units.
Metrics localization_metrics(std::span<const std::vector<double>> predicted,
                             std::span<const std::vector<double>> truth);

// confusion[t][p] counts samples of true class t predicted as p.
std::vector<std::vector<std::size_t>> confusion_matrix(std::span<const std::size_t> predicted,
                                                       std::span<const std::size_t> truth, std::size_t classes);

// Unweighted mean of per-class F1 over all `classes`; a class absent from
// both prediction and truth scores 0.
Metrics classification_metrics(std::span<const std::size_t> predicted, std::span<const std::size_t> truth,
                               std::size_t classes);

double cosine_similarity(std::span<const double> a, std::span<const double> b);

}  // namespace spar
