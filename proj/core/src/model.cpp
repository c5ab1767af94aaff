#include "spar/model.hpp"

#include <cmath>
#include <iostream>

#include "spar/errors.hpp"

namespace spar {

using ad::Tape;
using ad::Var;

void ModelConfig::validate() const {
  stack(1).validate();
  require(encoder_layers > 0 && joint_layers > 0 && decoder_layers > 0, "every stack needs at least one layer");
  require(d_r > 0, "structural dim must be positive");
  require(spatial_dim == 2 || spatial_dim == 3, "spatial dim must be 2 or 3");
  require(!modalities.empty(), "model needs at least one modality");
  for (const auto& m : modalities) {
    require(m.nodes > 0 && m.tokens > 0 && m.token_dim > 0 && m.identities > 0,
            "modality extents must be positive");
  }
}

namespace {
double fan_in_std(std::size_t in) { return 1.0 / std::sqrt(static_cast<double>(in)); }
}  // namespace

SparModel::SparModel(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  Rng rng(seed);
  const std::size_t d = config_.d;
  const double s = config_.init_std;
  for (std::size_t k = 0; k < config_.modalities.size(); ++k) {
    const auto& shape = config_.modalities[k];
    const std::string p = "m" + std::to_string(k) + ".";
    ModalityParams mp;
    // Embedders use fan-in scaling so each addend has roughly unit scale,
    // comparable to the sinusoidal token-index term.
    mp.signal_embed = make_linear(store_, p + "signal_embed", shape.token_dim, d, rng, fan_in_std(shape.token_dim));
    mp.spatial_embed =
        make_linear(store_, p + "spatial_embed", config_.spatial_dim, d, rng, fan_in_std(config_.spatial_dim));
    mp.structural_embed = make_linear(store_, p + "structural_embed", config_.d_r, d, rng, fan_in_std(config_.d_r));
    Tensor table({shape.identities, config_.d_r});
    for (double& v : table.data()) v = normal(rng, 0.0, 1.0);
    mp.structural.rows = &store_.create(p + "structural", std::move(table));
    mp.encoder = make_stack(store_, p + "encoder", config_.stack(config_.encoder_layers), rng, s);
    mp.signal_latent_proj = make_linear(store_, p + "signal_decoder.latent_proj", d, d, rng, s);
    mp.spatial_latent_proj = make_linear(store_, p + "spatial_decoder.latent_proj", d, d, rng, s);
    mp.signal_decoder = make_stack(store_, p + "signal_decoder", config_.stack(config_.decoder_layers), rng, s);
    mp.spatial_decoder = make_stack(store_, p + "spatial_decoder", config_.stack(config_.decoder_layers), rng, s);
    mp.signal_head = make_linear(store_, p + "signal_decoder.head", d, shape.token_dim, rng, s);
    mp.spatial_head = make_linear(store_, p + "spatial_decoder.head", d, config_.spatial_dim, rng, s);
    modalities_.push_back(mp);

    const Tensor per_node = token_index_embedding(shape.tokens, d);
    std::vector<double> tiled;
    for (std::size_t i = 0; i < shape.nodes; ++i)
      tiled.insert(tiled.end(), per_node.data().begin(), per_node.data().end());
    token_index_.emplace_back(Shape{shape.nodes * shape.tokens, d}, std::move(tiled));
  }
  joint_ = make_stack(store_, "joint", config_.stack(config_.joint_layers), rng, s);
}

std::vector<Parameter*> SparModel::encoder_parameters() {
  std::vector<Parameter*> out;
  for (Parameter* p : store_.all()) {
    if (p->name.find("_decoder") == std::string::npos) out.push_back(p);
  }
  return out;
}

std::vector<Parameter*> SparModel::decoder_parameters() {
  std::vector<Parameter*> out;
  for (Parameter* p : store_.all()) {
    if (p->name.find("_decoder") != std::string::npos) out.push_back(p);
  }
  return out;
}

namespace {

void check_input(const SparModel& model, const ModelInput& input, std::span<const TokenMask> masks) {
  const auto& cfg = model.config();
  if (input.modalities.size() != cfg.modalities.size()) {
    throw ContractError("input has " + std::to_string(input.modalities.size()) + " modalities, model has " +
                        std::to_string(cfg.modalities.size()));
  }
  require(masks.size() == input.modalities.size(), "one mask per modality is required");
  for (std::size_t k = 0; k < input.modalities.size(); ++k) {
    const auto& mi = input.modalities[k];
    const auto& shape = cfg.modalities[k];
    if (mi.grid.nodes != shape.nodes || mi.grid.tokens != shape.tokens || mi.grid.token_dim != shape.token_dim) {
      throw DimensionError("modality " + std::to_string(k) + " grid is " + std::to_string(mi.grid.nodes) + "x" +
                           std::to_string(mi.grid.tokens) + "x" + std::to_string(mi.grid.token_dim) +
                           ", model expects " + std::to_string(shape.nodes) + "x" + std::to_string(shape.tokens) +
                           "x" + std::to_string(shape.token_dim));
    }
    if (mi.layout.rank() != 2 || mi.layout.rows() != shape.nodes || mi.layout.cols() != cfg.spatial_dim) {
      throw DimensionError("modality " + std::to_string(k) + " layout " + shape_string(mi.layout.shape()) +
                           " does not match " + std::to_string(shape.nodes) + " nodes in " +
                           std::to_string(cfg.spatial_dim) + "D");
    }
    require(mi.node_ids.size() == shape.nodes, "one node id per node is required");
    const TokenMask& m = masks[k];
    require(m.nodes == shape.nodes && m.tokens == shape.tokens, "mask shape does not match modality grid");
    for (std::size_t s = 0; s < m.slots(); ++s) {
      require(!(m.visible[s] && mi.grid.missing[s]), "mask exposes a missing token");
    }
  }
}

// Missing slots are zero-padded before embedding.
Tensor padded_values(const TokenGrid& grid) {
  Tensor v = grid.values;
  for (std::size_t s = 0; s < grid.slots(); ++s) {
    if (grid.missing[s]) {
      for (double& x : v.row(s)) x = 0.0;
    }
  }
  return v;
}

EmbeddedGrid embed_modality(Tape& tape, const SparModel& model, const ModalityInput& mi, std::size_t k) {
  const ModalityParams& mp = model.modality(k);
  const auto& cfg = model.config();
  const std::size_t slots = mi.grid.slots();
  Var signal = apply_linear(tape, mp.signal_embed, tape.constant(padded_values(mi.grid)));
  Var spatial = embed_spatial(tape, mp.spatial_embed, mi.layout, mi.grid.tokens);
  Var structural = cfg.structural_enabled
                       ? embed_structural(tape, mp.structural_embed, mp.structural, mi.node_ids, mi.grid.tokens,
                                          mi.substitution)
                       : tape.constant(Tensor({slots, cfg.d}));
  Var token_index = tape.constant(model.token_index(k));
  return combine(signal, spatial, structural, token_index);
}

}  // namespace

ForwardArtifacts encode(Tape& tape, const SparModel& model, const ModelInput& input,
                        std::span<const TokenMask> masks, bool allow_empty) {
  check_input(model, input, masks);
  ForwardArtifacts out;
  out.modalities.resize(input.modalities.size());
  std::vector<Var> latents;
  for (std::size_t k = 0; k < input.modalities.size(); ++k) {
    ModalityArtifacts& a = out.modalities[k];
    a.embedded = embed_modality(tape, model, input.modalities[k], k);
    a.visible_slots = masks[k].visible_slots();
    if (a.visible_slots.empty()) {
      if (allow_empty) continue;
      throw ContractError("modality " + std::to_string(k) + " has no visible token to encode");
    }
    Var seq = ad::gather_rows(a.embedded.combined, a.visible_slots);
    a.latent = encoder_stack(tape, model.modality(k).encoder, seq);
    a.encoded = true;
    latents.push_back(a.latent);
  }
  require(!latents.empty(), "no modality has a visible token");
  Var joint = encoder_stack(tape, model.joint_encoder(), latents.size() == 1 ? latents[0] : ad::concat_rows(latents));
  std::size_t offset = 0;
  for (auto& a : out.modalities) {
    if (!a.encoded) continue;
    const std::size_t len = a.visible_slots.size();
    a.fused = (offset == 0 && len == joint.rows()) ? joint : ad::slice_rows(joint, offset, len);
    offset += len;
  }
  return out;
}

namespace {

Var decoder_input(Tape& tape, const Linear& proj, const ModalityArtifacts& a, Var placeholder) {
  require(a.encoded, "decoder called on a modality that was not encoded");
  Var projected = apply_linear(tape, proj, a.fused);
  return ad::replace_rows(placeholder, a.visible_slots, projected);
}

}  // namespace

Var signal_decoder_input(Tape& tape, const SparModel& model, const ForwardArtifacts& artifacts, std::size_t k) {
  const ModalityArtifacts& a = artifacts.modalities.at(k);
  Var placeholder = ad::add(ad::add(a.embedded.spatial, a.embedded.structural), a.embedded.token_index);
  return decoder_input(tape, model.modality(k).signal_latent_proj, a, placeholder);
}

Var spatial_decoder_input(Tape& tape, const SparModel& model, const ForwardArtifacts& artifacts, std::size_t k) {
  const ModalityArtifacts& a = artifacts.modalities.at(k);
  Var placeholder = ad::add(ad::add(a.embedded.signal, a.embedded.structural), a.embedded.token_index);
  return decoder_input(tape, model.modality(k).spatial_latent_proj, a, placeholder);
}

Var decode_signals(Tape& tape, const SparModel& model, const ForwardArtifacts& artifacts, const ModelInput& input,
                   std::span<const TokenMask> masks, std::size_t k) {
  (void)input;
  const ModalityParams& mp = model.modality(k);
  const auto present = masks[k].present();
  Var h = encoder_stack(tape, mp.signal_decoder, signal_decoder_input(tape, model, artifacts, k), present);
  return apply_linear(tape, mp.signal_head, h);
}

Var decode_spatial(Tape& tape, const SparModel& model, const ForwardArtifacts& artifacts, const ModelInput& input,
                   std::span<const TokenMask> masks, std::size_t k) {
  (void)input;
  const ModalityParams& mp = model.modality(k);
  const auto present = masks[k].present();
  Var h = encoder_stack(tape, mp.spatial_decoder, spatial_decoder_input(tape, model, artifacts, k), present);
  return apply_linear(tape, mp.spatial_head, h);
}

Tensor spatial_targets(const ModalityInput& mi) {
  const std::size_t n = mi.grid.nodes, m = mi.grid.tokens, ds = mi.layout.cols();
  Tensor out({n * m, ds});
  for (std::size_t i = 0; i < n; ++i) {
    auto src = mi.layout.row(i);
    for (std::size_t j = 0; j < m; ++j) std::copy(src.begin(), src.end(), out.row(i * m + j).begin());
  }
  return out;
}

LossTerms pretrain_loss(Tape& tape, const SparModel& model, const ModelInput& input,
                        std::span<const TokenMask> masks, bool spatial_objective) {
  LossTerms out;
  out.artifacts = encode(tape, model, input, masks);
  std::vector<Var> signal_terms, spatial_terms;
  for (std::size_t k = 0; k < input.modalities.size(); ++k) {
    const auto hidden = masks[k].hidden_slots();
    if (hidden.empty()) {
      std::clog << "warning: modality " << k << " has no hidden token; its loss term is zero\n";
      continue;
    }
    const ModalityInput& mi = input.modalities[k];
    Var xhat = decode_signals(tape, model, out.artifacts, input, masks, k);
    signal_terms.push_back(ad::masked_mse(xhat, mi.grid.values, hidden));
    if (spatial_objective) {
      Var shat = decode_spatial(tape, model, out.artifacts, input, masks, k);
      spatial_terms.push_back(ad::masked_mse(shat, spatial_targets(mi), hidden));
    }
  }
  auto total_of = [&tape](const std::vector<Var>& terms) {
    if (terms.empty()) return tape.constant(Tensor::scalar(0.0));
    Var acc = terms[0];
    for (std::size_t i = 1; i < terms.size(); ++i) acc = ad::add(acc, terms[i]);
    return acc;
  };
  out.signal = total_of(signal_terms);
  out.spatial = total_of(spatial_terms);
  out.total = ad::add(out.signal, out.spatial);
  return out;
}

Representation representation(const SparModel& model, const ModelInput& input) {
  std::vector<TokenMask> masks;
  for (const auto& mi : input.modalities) masks.push_back(full_visibility(mi.grid));
  return representation(model, input, masks);
}

Representation representation(const SparModel& model, const ModelInput& input, std::span<const TokenMask> masks) {
  Tape tape(false);
  ForwardArtifacts art = encode(tape, model, input, masks, /*allow_empty=*/true);
  const std::size_t d = model.config().d;
  Representation rep;
  std::vector<double> cat;
  for (const auto& a : art.modalities) {
    if (a.encoded) {
      rep.pooled.push_back(mean_pool(a.fused).value());
      rep.fused_tokens.push_back(a.fused.value());
    } else {
      rep.pooled.emplace_back(Shape{1, d});
      rep.fused_tokens.emplace_back();
    }
    rep.encoded_slots.push_back(a.visible_slots);
    cat.insert(cat.end(), rep.pooled.back().data().begin(), rep.pooled.back().data().end());
  }
  const std::size_t width = cat.size();
  rep.concatenated = Tensor({1, width}, std::move(cat));
  return rep;
}

}  // namespace spar
