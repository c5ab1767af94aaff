#pragma once

#include <cstddef>
#include <cstdint>
#include <set>
#include <span>
#include <vector>

#include "spar/finetune.hpp"
#include "spar/gradcheck.hpp"
#include "spar/metrics.hpp"
#include "spar/model.hpp"
#include "spar/synth.hpp"
#include "spar/train.hpp"

namespace spar {

// ---- spatial-information probe --------------------------------------------

struct ProbeConfig {
  std::vector<double> noise_grid{0.0, 0.1, 0.2, 0.4, 0.8};  // normalized units
  std::size_t steps = 300;
  std::size_t batch = 8;
  double lr = 1e-3;
  std::uint64_t seed = 1;
};

struct ProbePoint {
  double noise = 0.0;
  double error = 0.0;     // mean Euclidean error per token, normalized units
  double baseline = 0.0;  // same metric for predicting the training mean
};

/// For each noise magnitude: jitter normalized node positions by
/// U[-eta, eta] per coordinate, encode with the frozen model, then train a
/// one-layer transformer probe that regresses each token's (perturbed)
/// node position from the post-fusion tokens.
std::vector<ProbePoint> probe_spatial(const SparModel& model, std::span<const SyntheticSample> train,
                                      std::span<const SyntheticSample> eval, const ProbeConfig& config);

double mean_probe_error(const std::vector<ProbePoint>& curve);

// ---- occlusion similarity --------------------------------------------------

struct OcclusionResult {
  double matched = 0.0;     // cosine between complementary views of one sample
  double mismatched = 0.0;  // cosine between views of different samples
};

OcclusionResult occlusion_similarity(const SparModel& model, std::span<const SyntheticSample> samples,
                                     double mask_ratio, std::uint64_t seed);

// ---- message-drop robustness ----------------------------------------------

struct RobustnessPoint {
  double rate = 0.0;
  Metrics metrics;
};

// Applies message drop to every eval sample (`repeats` independent draws
// per sample) and evaluates the already fine-tuned head.
std::vector<RobustnessPoint> eval_robustness(const SparModel& model, const LocalizationHead& head,
                                             std::span<const SyntheticSample> eval, std::span<const double> rates,
                                             std::uint64_t seed, std::size_t repeats = 1);

// Count of adjacent pairs in `values` where the later is smaller by more
// than `tolerance` (relative), and total count of decreases.
struct MonotoneCheck {
  std::size_t inversions = 0;
  std::size_t large_inversions = 0;
};
MonotoneCheck check_non_decreasing(std::span<const double> values, double tolerance);

// ---- unseen placement ------------------------------------------------------

struct UnseenPlacementConfig {
  ModelConfig model;
  PretrainConfig pretrain;
  FinetuneConfig finetune;
  std::size_t held_out_scene = 0;
  double eval_fraction = 0.3;
  std::uint64_t model_seed = 1;
};

struct UnseenPlacementRun {
  Metrics metrics;
  std::set<std::size_t> scenes_seen;
  std::vector<StructuralSubstitution> substitutions;
};

struct UnseenPlacementResult {
  UnseenPlacementRun augmented;
  UnseenPlacementRun plain;
};

// Node identity -> uniformly drawn identity from `learned`, one draw per
// node of `scene` in every modality.
std::vector<StructuralSubstitution> draw_substitutions(const Dataset& data, std::size_t scene,
                                                       const std::set<std::size_t>& learned_scenes, Rng& rng);

/// Pretrains without the held-out scene, then fine-tunes and evaluates
/// localization on that scene alone with substituted structural vectors.
/// Runs once with augmentation on and once with it off.
UnseenPlacementResult eval_unseen_placement(const Dataset& data, const UnseenPlacementConfig& config);

UnseenPlacementRun run_unseen_placement(const Dataset& data, const UnseenPlacementConfig& config, bool augmentation);

// ---- gradient check of the full pretraining loss --------------------------

// Fixes one sample, its augmentation and its masks, then checks the dual
// reconstruction loss against central differences over every parameter.
GradCheckResult full_loss_grad_check(const Dataset& data, const ModelConfig& model_config,
                                     const PretrainConfig& pretrain_config, std::uint64_t seed,
                                     const GradCheckOptions& options = {});

}  // namespace spar
