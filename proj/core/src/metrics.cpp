#include "spar/metrics.hpp"

#include <cmath>

#include "spar/errors.hpp"

namespace spar {

Metrics localization_metrics(std::span<const std::vector<double>> predicted,
                             std::span<const std::vector<double>> truth) {
  require(predicted.size() == truth.size() && !predicted.empty(),
          "localization metrics need equally many predictions and truths");
  Metrics m;
  double se = 0.0, dist = 0.0;
  std::size_t coords = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    require(predicted[i].size() == truth[i].size(), "localization metrics: dimension mismatch");
    double d2 = 0.0;
    for (std::size_t j = 0; j < truth[i].size(); ++j) {
      const double e = predicted[i][j] - truth[i][j];
      d2 += e * e;
    }
    se += d2;
    coords += truth[i].size();
    dist += std::sqrt(d2);
  }
  m.mse = se / static_cast<double>(coords);
  m.dist_err = dist / static_cast<double>(predicted.size());
  m.count = predicted.size();
  return m;
}

std::vector<std::vector<std::size_t>> confusion_matrix(std::span<const std::size_t> predicted,
                                                       std::span<const std::size_t> truth, std::size_t classes) {
  require(predicted.size() == truth.size(), "confusion matrix: length mismatch");
  std::vector<std::vector<std::size_t>> cm(classes, std::vector<std::size_t>(classes, 0));
  for (std::size_t i = 0; i < truth.size(); ++i) {
    require(truth[i] < classes && predicted[i] < classes, "confusion matrix: class id out of range");
    cm[truth[i]][predicted[i]] += 1;
  }
  return cm;
}

Metrics classification_metrics(std::span<const std::size_t> predicted, std::span<const std::size_t> truth,
                               std::size_t classes) {
  require(!truth.empty(), "classification metrics need at least one sample");
  const auto cm = confusion_matrix(predicted, truth, classes);
  Metrics m;
  std::size_t trace = 0;
  double f1_sum = 0.0;
  for (std::size_t c = 0; c < classes; ++c) {
    trace += cm[c][c];
    std::size_t predicted_c = 0, actual_c = 0;
    for (std::size_t o = 0; o < classes; ++o) {
      predicted_c += cm[o][c];
      actual_c += cm[c][o];
    }
    const double tp = static_cast<double>(cm[c][c]);
    const double denom = static_cast<double>(predicted_c + actual_c);
    f1_sum += denom > 0.0 ? 2.0 * tp / denom : 0.0;
  }
  m.accuracy = static_cast<double>(trace) / static_cast<double>(truth.size());
  m.macro_f1 = f1_sum / static_cast<double>(classes);
  m.count = truth.size();
  return m;
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), "cosine similarity: length mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

}  // namespace spar
