#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "spar/autodiff.hpp"
#include "spar/embedding.hpp"
#include "spar/masking.hpp"
#include "spar/parameter.hpp"
#include "spar/transformer.hpp"

namespace spar {

struct ModalityShape {
  std::size_t nodes = 0;
  std::size_t tokens = 0;
  std::size_t token_dim = 0;
  // Rows of this modality's structural table (persistent node identities).
  std::size_t identities = 0;
};

struct ModelConfig {
  std::size_t d = 64;
  std::size_t heads = 4;
  std::size_t d_ff = 128;
  std::size_t encoder_layers = 2;
  std::size_t joint_layers = 1;
  std::size_t decoder_layers = 1;
  std::size_t d_r = 8;
  std::size_t spatial_dim = 2;
  std::vector<ModalityShape> modalities;
  bool structural_enabled = true;
  double init_std = 0.02;

  void validate() const;
  StackConfig stack(std::size_t layers) const { return {d, heads, layers, d_ff}; }
};

struct ModalityParams {
  Linear signal_embed;
  Linear spatial_embed;
  Linear structural_embed;
  StructuralTable structural;
  StackParams encoder;
  Linear signal_latent_proj;
  Linear spatial_latent_proj;
  StackParams signal_decoder;
  StackParams spatial_decoder;
  Linear signal_head;
  Linear spatial_head;
};

/// All learnable state of the placement-aware masked autoencoder.
///
/// Parameter names: "m<k>.*" for modality k, "joint.*" for the cross-modal
/// encoder. Encoder-side parameters (embedders, structural table, encoders)
/// are the ones frozen at fine-tune time.
class SparModel {
 public:
  SparModel(ModelConfig config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  std::size_t modality_count() const { return modalities_.size(); }
  const ModalityParams& modality(std::size_t k) const { return modalities_.at(k); }
  const StackParams& joint_encoder() const { return joint_; }
  // Sinusoidal token-index embedding for modality k, tiled over nodes.
  const Tensor& token_index(std::size_t k) const { return token_index_.at(k); }

  ParameterStore& parameters() { return store_; }
  const ParameterStore& parameters() const { return store_; }
  std::vector<Parameter*> encoder_parameters();
  std::vector<Parameter*> decoder_parameters();
  std::vector<Parameter*> all_parameters() { return store_.all(); }

 private:
  ModelConfig config_;
  ParameterStore store_;
  std::vector<ModalityParams> modalities_;
  StackParams joint_;
  std::vector<Tensor> token_index_;
};

/// One modality of one sample as the model consumes it.
struct ModalityInput {
  TokenGrid grid;
  Tensor layout;  // normalized (and possibly augmented) positions, [n x d_S]
  std::vector<std::uint64_t> node_ids;
  const StructuralSubstitution* substitution = nullptr;
};

struct ModelInput {
  std::vector<ModalityInput> modalities;
};

struct ModalityArtifacts {
  EmbeddedGrid embedded;
  std::vector<std::size_t> visible_slots;
  ad::Var latent;  // per-modality encoder output, one row per visible slot
  ad::Var fused;   // after the joint encoder
  bool encoded = false;
};

struct ForwardArtifacts {
  std::vector<ModalityArtifacts> modalities;
};

// Embeds, gathers visible slots, runs the per-modality encoders, then the
// joint encoder over their concatenation (modality order, slot order
// within a modality). With `allow_empty`, modalities without visible slots
// are skipped instead of rejected.
ForwardArtifacts encode(ad::Tape& tape, const SparModel& model, const ModelInput& input,
                        std::span<const TokenMask> masks, bool allow_empty = false);

// Decoder inputs: projected fused latents at visible slots, placeholders at
// every other slot. The signal placeholder is spatial + structural +
// token-index; the spatial placeholder is signal + structural +
// token-index. Missing slots are invalid attention keys.
ad::Var signal_decoder_input(ad::Tape& tape, const SparModel& model, const ForwardArtifacts& artifacts,
                             std::size_t k);
ad::Var spatial_decoder_input(ad::Tape& tape, const SparModel& model, const ForwardArtifacts& artifacts,
                              std::size_t k);

// [(n*m) x d_X]
ad::Var decode_signals(ad::Tape& tape, const SparModel& model, const ForwardArtifacts& artifacts,
                       const ModelInput& input, std::span<const TokenMask> masks, std::size_t k);
// [(n*m) x d_S]
ad::Var decode_spatial(ad::Tape& tape, const SparModel& model, const ForwardArtifacts& artifacts,
                       const ModelInput& input, std::span<const TokenMask> masks, std::size_t k);

// Node positions broadcast over tokens, [(n*m) x d_S].
Tensor spatial_targets(const ModalityInput& input);

struct LossTerms {
  ad::Var total;
  ad::Var signal;
  ad::Var spatial;
  ForwardArtifacts artifacts;
};

/// Sum over modalities of the mean-square signal error plus the mean-square
/// position error, both over hidden present slots only. A modality with no
/// hidden slot contributes zero.
LossTerms pretrain_loss(ad::Tape& tape, const SparModel& model, const ModelInput& input,
                        std::span<const TokenMask> masks, bool spatial_objective = true);

struct Representation {
  std::vector<Tensor> pooled;        // per modality, [1 x d]; zeros if nothing was encoded
  Tensor concatenated;               // [1 x K*d]
  std::vector<Tensor> fused_tokens;  // per modality, one row per encoded slot
  std::vector<std::vector<std::size_t>> encoded_slots;
};

// Forward pass without gradients. With no masks every present slot is
// visible.
Representation representation(const SparModel& model, const ModelInput& input);
Representation representation(const SparModel& model, const ModelInput& input, std::span<const TokenMask> masks);

}  // namespace spar
