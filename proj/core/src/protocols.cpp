#include "spar/protocols.hpp"

#include <cmath>

#include "spar/errors.hpp"

namespace spar {

using ad::Tape;
using ad::Var;

namespace {

struct ProbeExample {
  Tensor tokens;  // encoded tokens of all modalities, concatenated
  Tensor targets; // perturbed normalized node position per token
};

ProbeExample probe_example(const SparModel& model, const SyntheticSample& sample, double noise, Rng& rng) {
  PreparedInput prep = prepare_input(sample);
  for (auto& mi : prep.input.modalities) {
    for (double& v : mi.layout.data()) v += uniform(rng, -noise, noise);
  }
  Representation rep = representation(model, prep.input);
  std::vector<double> tok, tgt;
  std::size_t rows = 0;
  const std::size_t ds = model.config().spatial_dim;
  for (std::size_t k = 0; k < rep.fused_tokens.size(); ++k) {
    if (rep.encoded_slots[k].empty()) continue;
    const auto& mi = prep.input.modalities[k];
    const Tensor& t = rep.fused_tokens[k];
    tok.insert(tok.end(), t.data().begin(), t.data().end());
    for (std::size_t slot : rep.encoded_slots[k]) {
      auto pos = mi.layout.row(slot / mi.grid.tokens);
      tgt.insert(tgt.end(), pos.begin(), pos.end());
      ++rows;
    }
  }
  return {Tensor({rows, model.config().d}, std::move(tok)), Tensor({rows, ds}, std::move(tgt))};
}

}  // namespace

std::vector<ProbePoint> probe_spatial(const SparModel& model, std::span<const SyntheticSample> train,
                                      std::span<const SyntheticSample> eval, const ProbeConfig& config) {
  require(!train.empty() && !eval.empty(), "probe needs training and evaluation samples");
  const auto& cfg = model.config();
  std::vector<ProbePoint> curve;
  for (std::size_t g = 0; g < config.noise_grid.size(); ++g) {
    const double noise = config.noise_grid[g];
    Rng noise_rng(derive_seed(config.seed, 100 + g));
    std::vector<ProbeExample> tr, ev;
    for (const auto& s : train) tr.push_back(probe_example(model, s, noise, noise_rng));
    for (const auto& s : eval) ev.push_back(probe_example(model, s, noise, noise_rng));

    ParameterStore store;
    Rng init(derive_seed(config.seed, 200 + g));
    StackParams layer = make_stack(store, "probe.layer", StackConfig{cfg.d, cfg.heads, 1, cfg.d_ff}, init);
    Linear out = make_linear(store, "probe.out", cfg.d, cfg.spatial_dim, init, 0.02);
    auto params = store.all();
    const AdamOptions adam{config.lr};
    const std::size_t batch = std::min(config.batch, tr.size());

    for (std::size_t step = 0; step < config.steps; ++step) {
      Rng rng(derive_seed(config.seed, 10000 * (g + 1) + step));
      Tape tape;
      Var total;
      for (std::size_t b = 0; b < batch; ++b) {
        const ProbeExample& ex = tr[uniform_index(rng, tr.size())];
        Var pred = apply_linear(tape, out, encoder_stack(tape, layer, tape.constant(ex.tokens)));
        std::vector<std::size_t> all(ex.tokens.rows());
        for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
        Var l = ad::masked_mse(pred, ex.targets, all);
        total = total.valid() ? ad::add(total, l) : l;
      }
      tape.backward(ad::scale(total, 1.0 / static_cast<double>(batch)));
      adam_step(params, adam);
    }

    std::vector<double> mean(cfg.spatial_dim, 0.0);
    std::size_t n_train_tokens = 0;
    for (const auto& ex : tr) {
      for (std::size_t r = 0; r < ex.targets.rows(); ++r) {
        for (std::size_t j = 0; j < cfg.spatial_dim; ++j) mean[j] += ex.targets.at(r, j);
        ++n_train_tokens;
      }
    }
    for (double& m : mean) m /= static_cast<double>(n_train_tokens);

    double err = 0.0, base = 0.0;
    std::size_t count = 0;
    for (const auto& ex : ev) {
      Tape tape(false);
      Var pred = apply_linear(tape, out, encoder_stack(tape, layer, tape.constant(ex.tokens)));
      for (std::size_t r = 0; r < ex.targets.rows(); ++r) {
        double e2 = 0.0, b2 = 0.0;
        for (std::size_t j = 0; j < cfg.spatial_dim; ++j) {
          const double t = ex.targets.at(r, j);
          e2 += (pred.value().at(r, j) - t) * (pred.value().at(r, j) - t);
          b2 += (mean[j] - t) * (mean[j] - t);
        }
        err += std::sqrt(e2);
        base += std::sqrt(b2);
        ++count;
      }
    }
    curve.push_back({noise, err / static_cast<double>(count), base / static_cast<double>(count)});
  }
  return curve;
}

double mean_probe_error(const std::vector<ProbePoint>& curve) {
  require(!curve.empty(), "empty probe curve");
  double s = 0.0;
  for (const auto& p : curve) s += p.error;
  return s / static_cast<double>(curve.size());
}

OcclusionResult occlusion_similarity(const SparModel& model, std::span<const SyntheticSample> samples,
                                     double mask_ratio, std::uint64_t seed) {
  require(samples.size() >= 2, "occlusion similarity needs at least two samples");
  std::vector<Tensor> view_a, view_b;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    Rng rng(derive_seed(seed, i));
    PreparedInput prep = prepare_input(samples[i]);
    std::vector<TokenMask> masks, comp;
    for (const auto& mi : prep.input.modalities) {
      masks.push_back(random_mask(mi.grid, mask_ratio, rng));
      comp.push_back(complement(masks.back()));
    }
    view_a.push_back(representation(model, prep.input, masks).concatenated);
    view_b.push_back(representation(model, prep.input, comp).concatenated);
  }
  OcclusionResult r;
  const std::size_t n = samples.size();
  for (std::size_t i = 0; i < n; ++i) {
    r.matched += cosine_similarity(view_a[i].data(), view_b[i].data());
    r.mismatched += cosine_similarity(view_a[i].data(), view_b[(i + 1) % n].data());
  }
  r.matched /= static_cast<double>(n);
  r.mismatched /= static_cast<double>(n);
  return r;
}

std::vector<RobustnessPoint> eval_robustness(const SparModel& model, const LocalizationHead& head,
                                             std::span<const SyntheticSample> eval, std::span<const double> rates,
                                             std::uint64_t seed, std::size_t repeats) {
  require(!eval.empty(), "robustness evaluation needs samples");
  require(repeats >= 1, "robustness evaluation needs at least one repeat");
  std::vector<RobustnessPoint> out;
  for (std::size_t r = 0; r < rates.size(); ++r) {
    const double rate = rates[r];
    const std::size_t reps = rate == 0.0 ? 1 : repeats;
    std::vector<SampleFeatures> feats;
    for (std::size_t rep = 0; rep < reps; ++rep) {
      for (std::size_t i = 0; i < eval.size(); ++i) {
        Rng rng(derive_seed(seed, (r + 1) * 1000003 + rep * 7919 + i));
        feats.push_back(extract_features(model, apply_message_drop(eval[i], rate, rng)));
      }
    }
    out.push_back({rate, evaluate_localization(head, feats)});
  }
  return out;
}

MonotoneCheck check_non_decreasing(std::span<const double> values, double tolerance) {
  MonotoneCheck c;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] < values[i - 1]) {
      ++c.inversions;
      const double rel = (values[i - 1] - values[i]) / std::max(std::abs(values[i - 1]), 1e-300);
      if (rel > tolerance) ++c.large_inversions;
    }
  }
  return c;
}

std::vector<StructuralSubstitution> draw_substitutions(const Dataset& data, std::size_t scene,
                                                       const std::set<std::size_t>& learned_scenes, Rng& rng) {
  require(!learned_scenes.empty(), "no learned scene to draw structural vectors from");
  std::vector<std::size_t> scenes(learned_scenes.begin(), learned_scenes.end());
  std::vector<StructuralSubstitution> subs(data.modality_count());
  for (std::size_t k = 0; k < data.modality_count(); ++k) {
    const std::size_t n = data.nodes[k];
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t src_scene = scenes[uniform_index(rng, scenes.size())];
      const std::size_t src_node = uniform_index(rng, n);
      subs[k][scene * n + i] = src_scene * n + src_node;
    }
  }
  return subs;
}

UnseenPlacementRun run_unseen_placement(const Dataset& data, const UnseenPlacementConfig& config, bool augmentation) {
  require(data.layout_pool >= 3, "unseen-placement protocol needs a layout pool of at least 3");
  require(config.held_out_scene < data.layout_pool, "held-out scene is outside the layout pool");

  SparModel model(model_config_for(data, config.model), config.model_seed);
  PretrainConfig pc = config.pretrain;
  pc.augmentation = augmentation;
  pc.excluded_scenes = {config.held_out_scene};
  UnseenPlacementRun run;
  const PretrainResult pr = pretrain(model, data, pc, [&](std::size_t, const std::vector<std::size_t>& batch) {
    for (std::size_t i : batch) {
      if (data.samples[i].scene == config.held_out_scene) {
        throw ContractError("held-out layout entered a pretraining batch");
      }
    }
  });
  run.scenes_seen = pr.scenes_seen;

  Rng sub_rng(derive_seed(config.pretrain.seed, 77));
  run.substitutions = draw_substitutions(data, config.held_out_scene, run.scenes_seen, sub_rng);

  std::vector<SyntheticSample> held;
  for (const auto& s : data.samples)
    if (s.scene == config.held_out_scene) held.push_back(s);
  require(held.size() >= 4, "held-out scene has too few samples");
  const Split split = split_indices(held.size(), config.eval_fraction, config.finetune.seed);
  auto feats = extract_features(model, held, &run.substitutions);
  auto train = select<SampleFeatures>(feats, split.train);
  auto eval = select<SampleFeatures>(feats, split.eval);
  run.metrics = finetune_localization(model, train, eval, config.finetune).metrics;
  return run;
}

UnseenPlacementResult eval_unseen_placement(const Dataset& data, const UnseenPlacementConfig& config) {
  return {run_unseen_placement(data, config, true), run_unseen_placement(data, config, false)};
}

GradCheckResult full_loss_grad_check(const Dataset& data, const ModelConfig& model_config,
                                     const PretrainConfig& pretrain_config, std::uint64_t seed,
                                     const GradCheckOptions& options) {
  require(!data.samples.empty(), "gradient check: dataset is empty");
  SparModel model(model_config, derive_seed(seed, 1));
  // Heads start near zero, where many gradients are tiny and the relative
  // error measures cancellation. Larger shifts saturate attention and do the
  // same; 0.2 keeps every coordinate well conditioned.
  Rng init(derive_seed(seed, 2));
  for (Parameter* p : model.all_parameters()) {
    for (double& v : p->value.data()) v += 0.2 * normal(init);
  }
  Rng rng(derive_seed(seed, 3));
  Rng* augment = pretrain_config.augmentation ? &rng : nullptr;
  const PreparedInput prep = prepare_input(data.samples.front(), augment);
  std::vector<TokenMask> masks;
  for (const auto& mi : prep.input.modalities) masks.push_back(build_mask(mi.grid, pretrain_config, rng));
  const bool spatial = pretrain_config.spatial_objective;
  auto objective = [&](ad::Tape& tape) { return pretrain_loss(tape, model, prep.input, masks, spatial).total; };
  auto params = model.all_parameters();
  return grad_check(objective, params, options);
}

}  // namespace spar
