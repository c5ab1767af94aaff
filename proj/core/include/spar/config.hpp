#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "spar/finetune.hpp"
#include "spar/masking.hpp"
#include "spar/model.hpp"
#include "spar/protocols.hpp"
#include "spar/synth.hpp"
#include "spar/train.hpp"

namespace spar {

// Independent random streams derived from the single run seed.
struct RunSeeds {
  std::uint64_t data;
  std::uint64_t model;
  std::uint64_t pretrain;
  std::uint64_t finetune;
  std::uint64_t split;
  std::uint64_t eval;
};
RunSeeds run_seeds(std::uint64_t seed);

/// Effective run configuration. Text form: one `key = value` per line,
/// '#' starts a comment, unknown keys are rejected.
struct RunConfig {
  // model
  std::size_t model_d = 64;
  std::size_t model_heads = 4;
  std::size_t model_layers = 2;
  std::size_t model_joint_layers = 1;
  std::size_t model_decoder_layers = 1;
  std::size_t model_ff = 128;
  std::size_t model_d_r = 8;
  // data
  std::size_t data_modalities = 2;
  std::size_t data_nodes = 6;
  std::size_t data_tokens = 8;
  std::size_t data_token_dim = 0;  // 0 keeps each modality's own default
  std::size_t data_layout_pool = 4;
  std::size_t data_samples = 256;
  std::size_t data_classes = 4;
  std::size_t data_spatial_dim = 2;
  double data_half_width = 50.0;
  double data_gain_min = 0.5;
  double data_gain_max = 2.0;
  double data_noise = 0.02;
  double data_freq_base = 0.5;
  double data_freq_step = 0.5;
  double data_decay = 0.5;
  // masking
  MaskStrategy mask_strategy = MaskStrategy::Random;
  double mask_ratio = 0.75;
  std::size_t mask_min_visible = 1;
  std::size_t mask_drop_nodes = 1;
  // pretraining and ablation switches
  std::size_t train_steps = 500;
  double train_lr = 1e-3;
  std::size_t train_batch = 8;
  bool aug_enabled = true;
  bool loss_spatial_enabled = true;
  bool embed_structural_enabled = true;
  // fine-tuning and evaluation
  std::size_t finetune_steps = 400;
  double finetune_lr = 1e-3;
  std::size_t finetune_batch = 16;
  double finetune_label_ratio = 1.0;
  double eval_fraction = 0.25;
  std::size_t eval_drop_repeats = 4;
  // probe
  std::size_t probe_steps = 300;
  double probe_lr = 1e-3;
  std::size_t probe_batch = 8;
  std::vector<double> probe_noise_grid{0.0, 0.1, 0.2, 0.4, 0.8};
  std::uint64_t seed = 1;

  bool operator==(const RunConfig&) const = default;

  void validate() const;
  RunSeeds seeds() const { return run_seeds(seed); }
  SynthConfig synth() const;
  ModelConfig model(const Dataset& data) const;
  PretrainConfig pretrain() const;
  FinetuneConfig finetune() const;
  ProbeConfig probe() const;
};

RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::string& path);
// Every key, one per line, in documentation order.
std::string config_to_text(const RunConfig& config);

struct ConfigKey {
  std::string key;
  std::string doc;
};
const std::vector<ConfigKey>& config_keys();

}  // namespace spar
