#include "spar/train.hpp"

#include <cmath>
#include <sstream>

#include "spar/errors.hpp"

namespace spar {

PreparedInput prepare_input(const SyntheticSample& sample, Rng* augment_rng,
                            const std::vector<StructuralSubstitution>* substitutions) {
  require(!sample.layouts.empty(), "sample has no modality");
  const std::size_t ds = sample.layouts[0].cols();
  std::size_t total = 0;
  for (const auto& l : sample.layouts) total += l.rows();
  Tensor all({total, ds});
  std::size_t r = 0;
  for (const auto& l : sample.layouts) {
    for (std::size_t i = 0; i < l.rows(); ++i, ++r)
      std::copy(l.row(i).begin(), l.row(i).end(), all.row(r).begin());
  }
  PreparedInput out;
  out.stats = normalize_layout(all);
  Tensor coords = out.stats.coords;
  if (augment_rng) coords = apply_rigid_transform(coords, sample_rigid_transform(ds, *augment_rng));

  r = 0;
  for (std::size_t k = 0; k < sample.grids.size(); ++k) {
    ModalityInput mi;
    mi.grid = sample.grids[k];
    const std::size_t n = sample.layouts[k].rows();
    mi.layout = Tensor({n, ds});
    for (std::size_t i = 0; i < n; ++i, ++r)
      std::copy(coords.row(r).begin(), coords.row(r).end(), mi.layout.row(i).begin());
    mi.node_ids = sample.node_ids[k];
    if (substitutions) mi.substitution = &substitutions->at(k);
    out.input.modalities.push_back(std::move(mi));
  }
  return out;
}

TokenMask build_mask(const TokenGrid& grid, const PretrainConfig& config, Rng& rng) {
  switch (config.strategy) {
    case MaskStrategy::Random: return random_mask(grid, config.mask_ratio, rng);
    case MaskStrategy::NodeBalanced:
      return node_balanced_mask(grid, config.mask_ratio, config.min_visible_per_node, rng);
    case MaskStrategy::NodeDrop: return node_drop_mask(grid, config.drop_nodes, rng);
  }
  throw ContractError("unknown mask strategy");
}

ModelConfig model_config_for(const Dataset& data, ModelConfig base) {
  base.spatial_dim = data.spatial_dim;
  base.modalities.clear();
  for (std::size_t k = 0; k < data.modality_count(); ++k) {
    base.modalities.push_back({data.nodes[k], data.tokens[k], data.token_dims[k], data.identities(k)});
  }
  return base;
}

PretrainResult pretrain(SparModel& model, const Dataset& data, const PretrainConfig& config,
                        const BatchObserver& observer) {
  require(!data.samples.empty(), "pretrain: dataset is empty");
  require(config.batch > 0, "pretrain: batch size must be positive");
  require(config.mask_ratio > 0.0 && config.mask_ratio < 1.0, "pretrain: mask ratio must lie in (0, 1)");
  std::vector<std::size_t> pool;
  for (std::size_t i = 0; i < data.samples.size(); ++i) {
    if (!config.excluded_scenes.count(data.samples[i].scene)) pool.push_back(i);
  }
  require(!pool.empty(), "pretrain: every sample belongs to an excluded scene");

  PretrainResult result;
  auto params = model.all_parameters();
  model.parameters().zero_grad();
  const AdamOptions adam{config.lr};
  const double inv_batch = 1.0 / static_cast<double>(config.batch);

  for (std::size_t step = 0; step < config.steps; ++step) {
    Rng rng(derive_seed(config.seed, config.fixed_batch ? 0 : step + 1));
    std::vector<std::size_t> batch;
    for (std::size_t b = 0; b < config.batch; ++b) batch.push_back(pool[uniform_index(rng, pool.size())]);
    if (observer) observer(step, batch);

    ad::Tape tape;
    std::vector<ad::Var> losses;
    double signal = 0.0, spatial = 0.0;
    for (std::size_t idx : batch) {
      const SyntheticSample& sample = data.samples[idx];
      result.scenes_seen.insert(sample.scene);
      PreparedInput prep = prepare_input(sample, config.augmentation ? &rng : nullptr);
      std::vector<TokenMask> masks;
      for (const auto& mi : prep.input.modalities) masks.push_back(build_mask(mi.grid, config, rng));
      LossTerms terms = pretrain_loss(tape, model, prep.input, masks, config.spatial_objective);
      losses.push_back(terms.total);
      signal += terms.signal.value().item();
      spatial += terms.spatial.value().item();
    }
    ad::Var total = losses[0];
    for (std::size_t i = 1; i < losses.size(); ++i) total = ad::add(total, losses[i]);
    total = ad::scale(total, inv_batch);
    const double value = total.value().item();
    if (!std::isfinite(value)) {
      std::ostringstream msg;
      msg << "non-finite pretraining loss at step " << step << " (parameter norm " << parameter_norm(params) << ")";
      throw TrainingError(msg.str());
    }
    tape.backward(total);
    adam_step(params, adam);
    result.history.push_back({step, value, signal * inv_batch, spatial * inv_batch});
  }
  return result;
}

double head_mean_loss(const std::vector<LossRecord>& history, std::size_t count) {
  require(!history.empty(), "empty loss history");
  count = std::min(count, history.size());
  double s = 0.0;
  for (std::size_t i = 0; i < count; ++i) s += history[i].loss;
  return s / static_cast<double>(count);
}

double smoothed_tail_loss(const std::vector<LossRecord>& history, std::size_t window) {
  require(!history.empty(), "empty loss history");
  window = std::min(window, history.size());
  double s = 0.0;
  for (std::size_t i = history.size() - window; i < history.size(); ++i) s += history[i].loss;
  return s / static_cast<double>(window);
}

}  // namespace spar
