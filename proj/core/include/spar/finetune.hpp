#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "spar/metrics.hpp"
#include "spar/model.hpp"
#include "spar/synth.hpp"
#include "spar/train.hpp"
#include "spar/transformer.hpp"

namespace spar {

/// Frozen-encoder view of one labeled sample.
struct SampleFeatures {
  std::vector<Tensor> pooled;  // per modality, [1 x d]
  Tensor concatenated;         // [1 x K*d]
  NormalizedLayout stats;
  std::vector<double> target_normalized;
  std::vector<double> target_world;
  std::size_t cls = 0;
};

SampleFeatures extract_features(const SparModel& model, const SyntheticSample& sample,
                                const std::vector<StructuralSubstitution>* substitutions = nullptr);
std::vector<SampleFeatures> extract_features(const SparModel& model, std::span<const SyntheticSample> samples,
                                             const std::vector<StructuralSubstitution>* substitutions = nullptr);

struct FinetuneConfig {
  std::size_t steps = 400;
  std::size_t batch = 16;
  double lr = 1e-3;
  double label_ratio = 1.0;
  std::uint64_t seed = 1;
};

// Per-dimension standardization of frozen features, fitted on training
// features and stored with the head ("head.feature_mean", "head.feature_scale").
// Not touched by the optimizer.
struct FeatureScaler {
  Parameter* mean = nullptr;
  Parameter* scale = nullptr;

  void fit(const std::vector<const Tensor*>& rows);
  Tensor apply(const Tensor& x) const;
};

/// Standardized K pooled modality latents, one transformer layer,
/// mean-pooled and mapped linearly to d_S. Predicts in the sample's
/// normalized frame.
class LocalizationHead {
 public:
  LocalizationHead(std::size_t d, std::size_t heads, std::size_t d_ff, std::size_t spatial_dim,
                   std::size_t modalities, std::uint64_t seed);

  void fit_scaler(std::span<const SampleFeatures> train);
  ad::Var forward(ad::Tape& tape, const SampleFeatures& features) const;
  std::vector<double> predict_normalized(const SampleFeatures& features) const;
  std::vector<double> predict_world(const SampleFeatures& features) const;

  ParameterStore& parameters() { return store_; }
  const ParameterStore& parameters() const { return store_; }
  std::vector<Parameter*> trainable();

 private:
  ParameterStore store_;
  FeatureScaler scaler_;
  StackParams layer_;
  Linear output_;
};

/// Linear classifier on the standardized concatenated representation.
class ClassificationHead {
 public:
  ClassificationHead(std::size_t input_dim, std::size_t classes, std::uint64_t seed);

  void fit_scaler(std::span<const SampleFeatures> train);
  ad::Var forward(ad::Tape& tape, const SampleFeatures& features) const;
  std::size_t predict(const SampleFeatures& features) const;
  std::size_t classes() const { return classes_; }

  ParameterStore& parameters() { return store_; }
  const ParameterStore& parameters() const { return store_; }
  std::vector<Parameter*> trainable();

 private:
  ParameterStore store_;
  FeatureScaler scaler_;
  Linear output_;
  std::size_t classes_;
};

// First floor(ratio * |train|) of a seeded shuffle of `train`.
std::vector<std::size_t> labeled_subset(std::size_t train_size, double ratio, std::uint64_t seed);

struct LocalizationOutcome {
  LocalizationHead head;
  Metrics metrics;  // on the evaluation features, meters
  std::size_t labeled = 0;
};

struct ClassificationOutcome {
  ClassificationHead head;
  Metrics metrics;
  std::size_t labeled = 0;
};

Metrics evaluate_localization(const LocalizationHead& head, std::span<const SampleFeatures> eval);
Metrics evaluate_classification(const ClassificationHead& head, std::span<const SampleFeatures> eval);

/// MSE regression of the normalized source position; metrics are reported
/// after mapping predictions back to meters with each sample's own stats.
LocalizationOutcome finetune_localization(const SparModel& model, std::span<const SampleFeatures> train,
                                          std::span<const SampleFeatures> eval, const FinetuneConfig& config);

ClassificationOutcome finetune_classification(const SparModel& model, std::span<const SampleFeatures> train,
                                              std::span<const SampleFeatures> eval, std::size_t classes,
                                              const FinetuneConfig& config);

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> eval;
};

// Seeded shuffle; the last `eval_fraction` of it becomes the eval split.
Split split_indices(std::size_t count, double eval_fraction, std::uint64_t seed);

template <typename T>
std::vector<T> select(std::span<const T> items, std::span<const std::size_t> indices) {
  std::vector<T> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(items[i]);
  return out;
}

}  // namespace spar
