#include "spar/finetune.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "spar/errors.hpp"

namespace spar {

using ad::Tape;
using ad::Var;

SampleFeatures extract_features(const SparModel& model, const SyntheticSample& sample,
                                const std::vector<StructuralSubstitution>* substitutions) {
  PreparedInput prep = prepare_input(sample, nullptr, substitutions);
  Representation rep = representation(model, prep.input);
  SampleFeatures f;
  f.pooled = std::move(rep.pooled);
  f.concatenated = std::move(rep.concatenated);
  f.target_world = sample.source_position;
  f.target_normalized = prep.stats.to_normalized(sample.source_position);
  f.stats = std::move(prep.stats);
  f.cls = sample.cls;
  return f;
}

std::vector<SampleFeatures> extract_features(const SparModel& model, std::span<const SyntheticSample> samples,
                                             const std::vector<StructuralSubstitution>* substitutions) {
  std::vector<SampleFeatures> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(extract_features(model, s, substitutions));
  return out;
}

namespace {

constexpr const char* kScalerPrefix = "head.feature_";

FeatureScaler make_scaler(ParameterStore& store, std::size_t rows, std::size_t cols) {
  FeatureScaler s;
  s.mean = &store.create("head.feature_mean", Tensor({rows, cols}));
  Tensor ones({rows, cols});
  ones.fill(1.0);
  s.scale = &store.create("head.feature_scale", std::move(ones));
  return s;
}

std::vector<Parameter*> without_scaler(ParameterStore& store) {
  std::vector<Parameter*> out;
  for (Parameter* p : store.all())
    if (p->name.rfind(kScalerPrefix, 0) != 0) out.push_back(p);
  return out;
}

}  // namespace

void FeatureScaler::fit(const std::vector<const Tensor*>& rows) {
  require(!rows.empty(), "feature scaler needs at least one training sample");
  Tensor& m = mean->value;
  Tensor& sd = scale->value;
  const double inv = 1.0 / static_cast<double>(rows.size());
  m.fill(0.0);
  for (const Tensor* r : rows) {
    if (r->shape() != m.shape()) throw DimensionError("feature scaler: feature shape does not match the head");
    for (std::size_t i = 0; i < m.size(); ++i) m[i] += (*r)[i] * inv;
  }
  sd.fill(0.0);
  for (const Tensor* r : rows)
    for (std::size_t i = 0; i < m.size(); ++i) sd[i] += ((*r)[i] - m[i]) * ((*r)[i] - m[i]) * inv;
  for (double& v : sd.data()) v = std::max(std::sqrt(v), 1e-6);
}

Tensor FeatureScaler::apply(const Tensor& x) const {
  Tensor out = x;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (x[i] - mean->value[i]) / scale->value[i];
  return out;
}

LocalizationHead::LocalizationHead(std::size_t d, std::size_t heads, std::size_t d_ff, std::size_t spatial_dim,
                                   std::size_t modalities, std::uint64_t seed) {
  Rng rng(seed);
  scaler_ = make_scaler(store_, modalities, d);
  layer_ = make_stack(store_, "head.layer", StackConfig{d, heads, 1, d_ff}, rng);
  output_ = make_linear(store_, "head.out", d, spatial_dim, rng, 0.02);
}

std::vector<Parameter*> LocalizationHead::trainable() { return without_scaler(store_); }

void LocalizationHead::fit_scaler(std::span<const SampleFeatures> train) {
  std::vector<Tensor> stacked;
  stacked.reserve(train.size());
  for (const auto& f : train) {
    Tensor t({f.pooled.size(), f.pooled.empty() ? 0 : f.pooled[0].size()});
    for (std::size_t k = 0; k < f.pooled.size(); ++k)
      std::copy(f.pooled[k].data().begin(), f.pooled[k].data().end(), t.row(k).begin());
    stacked.push_back(std::move(t));
  }
  std::vector<const Tensor*> rows;
  for (const auto& t : stacked) rows.push_back(&t);
  scaler_.fit(rows);
}

Var LocalizationHead::forward(Tape& tape, const SampleFeatures& features) const {
  const std::size_t k_count = scaler_.mean->value.rows();
  if (features.pooled.size() != k_count) throw DimensionError("localization head: modality count does not match");
  std::vector<Var> tokens;
  for (std::size_t k = 0; k < k_count; ++k) {
    const Tensor& p = features.pooled[k];
    if (p.size() != scaler_.mean->value.cols()) throw DimensionError("localization head: feature width does not match");
    Tensor z({1, p.size()});
    for (std::size_t j = 0; j < p.size(); ++j)
      z[j] = (p[j] - scaler_.mean->value.at(k, j)) / scaler_.scale->value.at(k, j);
    tokens.push_back(tape.constant(z));
  }
  Var seq = tokens.size() == 1 ? tokens[0] : ad::concat_rows(tokens);
  Var h = encoder_stack(tape, layer_, seq);
  return apply_linear(tape, output_, mean_pool(h));
}

std::vector<double> LocalizationHead::predict_normalized(const SampleFeatures& features) const {
  Tape tape(false);
  auto v = forward(tape, features).value().data();
  return {v.begin(), v.end()};
}

std::vector<double> LocalizationHead::predict_world(const SampleFeatures& features) const {
  return features.stats.to_world(predict_normalized(features));
}

ClassificationHead::ClassificationHead(std::size_t input_dim, std::size_t classes, std::uint64_t seed)
    : classes_(classes) {
  Rng rng(seed);
  scaler_ = make_scaler(store_, 1, input_dim);
  output_ = make_linear(store_, "head.classifier", input_dim, classes, rng, 0.02);
}

std::vector<Parameter*> ClassificationHead::trainable() { return without_scaler(store_); }

void ClassificationHead::fit_scaler(std::span<const SampleFeatures> train) {
  std::vector<const Tensor*> rows;
  for (const auto& f : train) rows.push_back(&f.concatenated);
  scaler_.fit(rows);
}

Var ClassificationHead::forward(Tape& tape, const SampleFeatures& features) const {
  if (features.concatenated.shape() != scaler_.mean->value.shape())
    throw DimensionError("classification head: feature width does not match");
  return apply_linear(tape, output_, tape.constant(scaler_.apply(features.concatenated)));
}

std::size_t ClassificationHead::predict(const SampleFeatures& features) const {
  Tape tape(false);
  auto logits = forward(tape, features).value().data();
  return static_cast<std::size_t>(std::max_element(logits.begin(), logits.end()) - logits.begin());
}

std::vector<std::size_t> labeled_subset(std::size_t train_size, double ratio, std::uint64_t seed) {
  require(ratio > 0.0 && ratio <= 1.0, "label ratio must lie in (0, 1]");
  std::vector<std::size_t> order(train_size);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, 17));
  for (std::size_t i = train_size; i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng, i)]);
  const auto keep = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(train_size)));
  require(keep > 0, "label ratio leaves no labeled sample");
  order.resize(keep);
  return order;
}

Split split_indices(std::size_t count, double eval_fraction, std::uint64_t seed) {
  require(eval_fraction > 0.0 && eval_fraction < 1.0, "eval fraction must lie in (0, 1)");
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, 29));
  for (std::size_t i = count; i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng, i)]);
  const auto n_eval = std::max<std::size_t>(1, static_cast<std::size_t>(eval_fraction * static_cast<double>(count)));
  require(n_eval < count, "split leaves no training sample");
  Split s;
  s.train.assign(order.begin(), order.end() - static_cast<std::ptrdiff_t>(n_eval));
  s.eval.assign(order.end() - static_cast<std::ptrdiff_t>(n_eval), order.end());
  return s;
}

Metrics evaluate_localization(const LocalizationHead& head, std::span<const SampleFeatures> eval) {
  std::vector<std::vector<double>> pred, truth;
  for (const auto& f : eval) {
    pred.push_back(head.predict_world(f));
    truth.push_back(f.target_world);
  }
  return localization_metrics(pred, truth);
}

Metrics evaluate_classification(const ClassificationHead& head, std::span<const SampleFeatures> eval) {
  std::vector<std::size_t> pred, truth;
  for (const auto& f : eval) {
    pred.push_back(head.predict(f));
    truth.push_back(f.cls);
  }
  return classification_metrics(pred, truth, head.classes());
}

namespace {

template <typename Head, typename LossFn>
void train_head(Head& head, std::span<const SampleFeatures> train, const std::vector<std::size_t>& labeled,
                const FinetuneConfig& config, LossFn loss_fn) {
  auto params = head.trainable();
  const AdamOptions adam{config.lr};
  const std::size_t batch = std::min(config.batch, labeled.size());
  const double inv = 1.0 / static_cast<double>(batch);
  for (std::size_t step = 0; step < config.steps; ++step) {
    Rng rng(derive_seed(config.seed, 1000 + step));
    Tape tape;
    Var total;
    for (std::size_t b = 0; b < batch; ++b) {
      const SampleFeatures& f = train[labeled[uniform_index(rng, labeled.size())]];
      Var l = loss_fn(tape, f);
      total = total.valid() ? ad::add(total, l) : l;
    }
    tape.backward(ad::scale(total, inv));
    adam_step(params, adam);
  }
}

}  // namespace

LocalizationOutcome finetune_localization(const SparModel& model, std::span<const SampleFeatures> train,
                                          std::span<const SampleFeatures> eval, const FinetuneConfig& config) {
  const auto labeled = labeled_subset(train.size(), config.label_ratio, config.seed);
  const auto& cfg = model.config();
  LocalizationOutcome out{LocalizationHead(cfg.d, cfg.heads, cfg.d_ff, cfg.spatial_dim, model.modality_count(),
                                           derive_seed(config.seed, 3)),
                          Metrics{}, labeled.size()};
  out.head.fit_scaler(train);
  train_head(out.head, train, labeled, config, [&out](Tape& tape, const SampleFeatures& f) {
    Var pred = out.head.forward(tape, f);
    Tensor target({1, f.target_normalized.size()}, f.target_normalized);
    const std::size_t row0[] = {0};
    return ad::masked_mse(pred, target, row0);
  });
  if (!eval.empty()) out.metrics = evaluate_localization(out.head, eval);
  return out;
}

ClassificationOutcome finetune_classification(const SparModel& model, std::span<const SampleFeatures> train,
                                              std::span<const SampleFeatures> eval, std::size_t classes,
                                              const FinetuneConfig& config) {
  const auto labeled = labeled_subset(train.size(), config.label_ratio, config.seed);
  std::set<std::size_t> seen;
  for (std::size_t i : labeled) seen.insert(train[i].cls);
  require(seen.size() >= 2, "classification fine-tuning needs at least two classes among labeled samples");
  const std::size_t input_dim = model.config().d * model.modality_count();
  ClassificationOutcome out{ClassificationHead(input_dim, classes, derive_seed(config.seed, 5)), Metrics{},
                            labeled.size()};
  out.head.fit_scaler(train);
  train_head(out.head, train, labeled, config, [&out](Tape& tape, const SampleFeatures& f) {
    return ad::cross_entropy(out.head.forward(tape, f), f.cls);
  });
  if (!eval.empty()) out.metrics = evaluate_classification(out.head, eval);
  return out;
}

}  // namespace spar
