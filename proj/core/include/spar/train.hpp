#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <set>
#include <stdexcept>
#include <vector>

#include "spar/masking.hpp"
#include "spar/model.hpp"
#include "spar/synth.hpp"

namespace spar {

struct PreparedInput {
  ModelInput input;
  NormalizedLayout stats;  // shared by every modality of the sample
};

/// Normalizes all node positions of the sample jointly (one mean, one
/// scale) and, when `augment_rng` is given, applies one random rigid
/// transform to the normalized layout.
PreparedInput prepare_input(const SyntheticSample& sample, Rng* augment_rng = nullptr,
                            const std::vector<StructuralSubstitution>* substitutions = nullptr);

struct PretrainConfig {
  std::size_t steps = 500;
  std::size_t batch = 8;
  double lr = 1e-3;
  MaskStrategy strategy = MaskStrategy::Random;
  double mask_ratio = 0.75;
  std::size_t min_visible_per_node = 1;
  std::size_t drop_nodes = 1;
  bool augmentation = true;
  bool spatial_objective = true;
  std::uint64_t seed = 1;
  // Reuse the step-0 batch, masks and augmentation on every step.
  bool fixed_batch = false;
  // Scenes whose samples never enter a batch.
  std::set<std::size_t> excluded_scenes;
};

struct LossRecord {
  std::size_t step = 0;
  double loss = 0.0;
  double signal = 0.0;
  double spatial = 0.0;
};

struct PretrainResult {
  std::vector<LossRecord> history;
  std::set<std::size_t> scenes_seen;
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

TokenMask build_mask(const TokenGrid& grid, const PretrainConfig& config, Rng& rng);

// Called with the step index and the dataset indices of its batch.
using BatchObserver = std::function<void(std::size_t, const std::vector<std::size_t>&)>;

/// Self-supervised pretraining: per step draw a batch, normalize and
/// augment layouts, build masks, average the dual reconstruction loss over
/// the batch, backpropagate and take one Adam step over every parameter.
/// Throws TrainingError on a non-finite loss.
PretrainResult pretrain(SparModel& model, const Dataset& data, const PretrainConfig& config,
                        const BatchObserver& observer = {});

// Mean loss of the first `count` records.
double head_mean_loss(const std::vector<LossRecord>& history, std::size_t count);
// Mean loss of the last `window` records.
double smoothed_tail_loss(const std::vector<LossRecord>& history, std::size_t window);

ModelConfig model_config_for(const Dataset& data, ModelConfig base);

}  // namespace spar
