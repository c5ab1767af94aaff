#include "spar_cli/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <ostream>

#include "spar/binary_io.hpp"
#include "spar/checkpoint.hpp"
#include "spar/config.hpp"
#include "spar/csv.hpp"
#include "spar/dataset_io.hpp"
#include "spar/errors.hpp"
#include "spar/finetune.hpp"
#include "spar/protocols.hpp"
#include "spar/train.hpp"

namespace spar::cli {

namespace {

struct CommonOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir = "spar-out";
  std::string data_path;
  std::string checkpoint_path;
  std::optional<double> label_ratio;
};

struct EvalOptions {
  std::string head_path;
  std::vector<double> drop_rates;
  std::optional<std::size_t> unseen_layout;
  std::string task = "localization";
  std::string variant = "spar";
};

std::string one_line(std::string s) {
  std::replace(s.begin(), s.end(), '\n', ' ');
  return s;
}

class Session {
 public:
  Session(const CommonOptions& common, std::ostream& out) : common_(common), out_(out) {
    if (!common.config_path.empty()) config_ = load_config(common.config_path);
    if (common.seed) config_.seed = *common.seed;
    if (common.label_ratio) config_.finetune_label_ratio = *common.label_ratio;
    config_.validate();
    std::filesystem::create_directories(common.out_dir);
    write("config.txt", config_to_text(config_));
  }

  const RunConfig& config() const { return config_; }

  void write(const std::string& name, const std::string& bytes) const {
    io::write_file_atomic((std::filesystem::path(common_.out_dir) / name).string(), bytes);
  }

  std::string path(const std::string& name) const { return (std::filesystem::path(common_.out_dir) / name).string(); }

  Dataset dataset() const {
    if (!common_.data_path.empty()) return load_dataset(common_.data_path);
    return make_dataset(config_.synth(), config_.seeds().data);
  }

  // Randomly initialized unless a checkpoint was given.
  SparModel model(const Dataset& data) const {
    SparModel m(config_.model(data), config_.seeds().model);
    if (!common_.checkpoint_path.empty()) load_checkpoint(common_.checkpoint_path, m.parameters());
    return m;
  }

  std::ostream& out() const { return out_; }

 private:
  CommonOptions common_;
  RunConfig config_;
  std::ostream& out_;
};

struct Features {
  std::vector<SampleFeatures> train;
  std::vector<SampleFeatures> eval;
  std::vector<SyntheticSample> eval_samples;
};

Features split_features(const Session& s, const SparModel& model, const Dataset& data) {
  const Split split = split_indices(data.samples.size(), s.config().eval_fraction, s.config().seeds().split);
  std::span<const SyntheticSample> all(data.samples);
  const auto train_samples = select<SyntheticSample>(all, split.train);
  Features f;
  f.eval_samples = select<SyntheticSample>(all, split.eval);
  f.train = extract_features(model, train_samples);
  f.eval = extract_features(model, f.eval_samples);
  return f;
}

int cmd_simulate(const Session& s) {
  const Dataset data = s.dataset();
  s.write("dataset.spds", encode_dataset(data));
  s.out() << "wrote " << data.samples.size() << " samples to " << s.path("dataset.spds") << "\n";
  return kExitOk;
}

int cmd_pretrain(const Session& s) {
  const Dataset data = s.dataset();
  SparModel model = s.model(data);
  const PretrainResult result = pretrain(model, data, s.config().pretrain());
  s.write("model.ckpt", encode_checkpoint(model.parameters()));
  s.write("loss.csv", loss_csv(result.history));
  const auto& h = result.history;
  s.out() << "steps " << h.size() << ", first-10 mean " << format_number(head_mean_loss(h, 10))
          << ", last-10 mean " << format_number(smoothed_tail_loss(h, 10)) << "\n";
  return kExitOk;
}

MetricsRow row(const Session& s, const std::string& protocol, const std::string& variant, double drop,
               const Metrics& m) {
  return {protocol, variant, s.config().seed, s.config().finetune_label_ratio, drop, m};
}

int cmd_finetune(const Session& s, const EvalOptions& opt) {
  const Dataset data = s.dataset();
  const SparModel model = s.model(data);
  const Features f = split_features(s, model, data);
  const FinetuneConfig cfg = s.config().finetune();
  std::vector<MetricsRow> rows;
  if (opt.task == "localization") {
    const LocalizationOutcome r = finetune_localization(model, f.train, f.eval, cfg);
    s.write("head.ckpt", encode_checkpoint(r.head.parameters()));
    rows.push_back(row(s, "localization", opt.variant, 0.0, r.metrics));
    s.out() << "localization dist_err " << format_number(r.metrics.dist_err) << " m\n";
  } else {
    const ClassificationOutcome r = finetune_classification(model, f.train, f.eval, data.classes, cfg);
    s.write("head.ckpt", encode_checkpoint(r.head.parameters()));
    rows.push_back(row(s, "classification", opt.variant, 0.0, r.metrics));
    s.out() << "classification accuracy " << format_number(r.metrics.accuracy) << "\n";
  }
  s.write("metrics.csv", metrics_csv(rows));
  return kExitOk;
}

int cmd_eval_unseen(const Session& s, const EvalOptions& opt) {
  const Dataset data = s.dataset();
  const RunConfig& c = s.config();
  UnseenPlacementConfig u;
  u.model = c.model(data);
  u.pretrain = c.pretrain();
  u.finetune = c.finetune();
  u.held_out_scene = *opt.unseen_layout;
  u.eval_fraction = c.eval_fraction;
  u.model_seed = c.seeds().model;
  const UnseenPlacementResult r = eval_unseen_placement(data, u);
  std::vector<MetricsRow> rows{row(s, "unseen-placement", "aug-on", 0.0, r.augmented.metrics),
                               row(s, "unseen-placement", "aug-off", 0.0, r.plain.metrics)};
  s.write("metrics.csv", metrics_csv(rows));
  s.out() << "unseen layout " << u.held_out_scene << ": dist_err aug-on "
          << format_number(r.augmented.metrics.dist_err) << " m, aug-off " << format_number(r.plain.metrics.dist_err)
          << " m\n";
  return kExitOk;
}

int cmd_eval(const Session& s, const EvalOptions& opt) {
  if (opt.unseen_layout) return cmd_eval_unseen(s, opt);
  const Dataset data = s.dataset();
  const SparModel model = s.model(data);
  const Features f = split_features(s, model, data);
  const RunConfig& c = s.config();

  const ModelConfig& mc = model.config();
  LocalizationHead head(mc.d, mc.heads, mc.d_ff, mc.spatial_dim, model.modality_count(), c.seeds().finetune);
  if (!opt.head_path.empty()) {
    load_checkpoint(opt.head_path, head.parameters());
  } else {
    head = finetune_localization(model, f.train, f.eval, c.finetune()).head;
  }

  std::vector<double> rates{0.0};
  for (double r : opt.drop_rates) {
    require(r >= 0.0 && r < 1.0, "--drop-rate must lie in [0, 1)");
    if (r > 0.0) rates.push_back(r);
  }
  const auto points = eval_robustness(model, head, f.eval_samples, rates, c.seeds().eval, c.eval_drop_repeats);
  std::vector<MetricsRow> rows;
  for (const auto& p : points) {
    rows.push_back(row(s, "localization", opt.variant, p.rate, p.metrics));
    s.out() << "drop " << format_number(p.rate) << ": dist_err " << format_number(p.metrics.dist_err) << " m\n";
  }
  if (opt.head_path.empty()) {
    const auto cls = finetune_classification(model, f.train, f.eval, data.classes, c.finetune());
    rows.push_back(row(s, "classification", opt.variant, 0.0, cls.metrics));
    s.out() << "classification accuracy " << format_number(cls.metrics.accuracy) << ", macro-F1 "
            << format_number(cls.metrics.macro_f1) << "\n";
  }
  s.write("metrics.csv", metrics_csv(rows));
  return kExitOk;
}

int cmd_probe(const Session& s, const EvalOptions& opt) {
  const Dataset data = s.dataset();
  const SparModel model = s.model(data);
  const Split split = split_indices(data.samples.size(), s.config().eval_fraction, s.config().seeds().split);
  std::span<const SyntheticSample> all(data.samples);
  const auto train = select<SyntheticSample>(all, split.train);
  const auto eval = select<SyntheticSample>(all, split.eval);
  const auto curve = probe_spatial(model, train, eval, s.config().probe());
  s.write("probe.csv", probe_csv(opt.variant, s.config().seed, curve));
  for (const auto& p : curve) {
    s.out() << "noise " << format_number(p.noise) << ": error " << format_number(p.error) << " (baseline "
            << format_number(p.baseline) << ")\n";
  }
  return kExitOk;
}

int cmd_gradcheck(const Session& s, std::ostream& err) {
  const RunConfig& c = s.config();
  RunConfig small = c;
  small.data_samples = std::min<std::size_t>(c.data_samples, 4);
  const Dataset data = make_dataset(small.synth(), c.seeds().data);
  const GradCheckResult r = full_loss_grad_check(data, c.model(data), c.pretrain(), c.seed);
  char buf[160];
  std::snprintf(buf, sizeof buf, "max_relative_error %.6e over %zu coordinates (worst %s[%zu])\n",
                r.max_relative_error, r.coordinates_checked, r.worst_parameter.c_str(), r.worst_index);
  s.out() << buf;
  if (!r.ok) {
    err << "ERROR: " << one_line(r.failure) << "\n";
    return kExitRuntime;
  }
  if (!(r.max_relative_error < 1e-4)) {
    err << "ERROR: gradient check failed, max relative error " << format_number(r.max_relative_error)
        << " >= 1e-4\n";
    return kExitRuntime;
  }
  return kExitOk;
}

void add_common(CLI::App* cmd, CommonOptions& common, bool data = true, bool checkpoint = false) {
  cmd->add_option("--config", common.config_path, "run configuration file (key = value lines)")
      ->check(CLI::ExistingFile);
  cmd->add_option("--seed", common.seed, "overrides the config seed");
  cmd->add_option("--out", common.out_dir, "output directory")->capture_default_str();
  if (data) cmd->add_option("--data", common.data_path, "dataset file from `simulate`; generated if absent");
  if (checkpoint)
    cmd->add_option("--checkpoint", common.checkpoint_path, "encoder checkpoint; random init if absent");
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Placement-aware masked pretraining for distributed sensing", "spar"};
  app.require_subcommand(1);
  app.fallthrough(false);

  CommonOptions common;
  EvalOptions eval;

  auto* simulate = app.add_subcommand("simulate", "generate a synthetic dataset");
  add_common(simulate, common, false);

  auto* pre = app.add_subcommand("pretrain", "self-supervised pretraining; writes model.ckpt and loss.csv");
  add_common(pre, common, true, true);

  auto* fine = app.add_subcommand("finetune", "train a head on the frozen encoder; writes head.ckpt and metrics.csv");
  add_common(fine, common, true, true);
  fine->add_option("--task", eval.task, "localization | classification")
      ->check(CLI::IsMember({"localization", "classification"}))
      ->capture_default_str();
  fine->add_option("--variant", eval.variant, "label written to the CSV")->capture_default_str();
  fine->add_option("--label-ratio", common.label_ratio, "fraction of training labels used");

  auto* ev = app.add_subcommand("eval", "evaluation protocols; writes metrics.csv");
  add_common(ev, common, true, true);
  ev->add_option("--head", eval.head_path, "localization head checkpoint; fine-tuned here if absent");
  ev->add_option("--drop-rate", eval.drop_rates, "message-drop rates to evaluate (repeatable)");
  ev->add_option("--label-ratio", common.label_ratio, "fraction of training labels used");
  ev->add_option("--unseen-layout", eval.unseen_layout,
                 "hold out this layout index: pretrain with and without augmentation, evaluate on it");
  ev->add_option("--variant", eval.variant, "label written to the CSV")->capture_default_str();

  auto* probe = app.add_subcommand("probe", "spatial-information probe; writes probe.csv");
  add_common(probe, common, true, true);
  probe->add_option("--variant", eval.variant, "label written to the CSV")->capture_default_str();

  auto* grad = app.add_subcommand("gradcheck", "finite-difference check of the full pretraining loss");
  add_common(grad, common, false);

  if (!args.empty() && !args.front().starts_with("-") && !app.get_subcommand_no_throw(args.front())) {
    err << "ERROR: unknown subcommand '" << one_line(args.front()) << "'\n" << app.help();
    return kExitUsage;
  }

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "ERROR: " << one_line(e.what()) << "\n" << app.help();
    return kExitUsage;
  }

  try {
    const Session session(common, out);
    if (*simulate) return cmd_simulate(session);
    if (*pre) return cmd_pretrain(session);
    if (*fine) return cmd_finetune(session, eval);
    if (*ev) return cmd_eval(session, eval);
    if (*probe) return cmd_probe(session, eval);
    return cmd_gradcheck(session, err);
  } catch (const std::exception& e) {
    err << "ERROR: " << one_line(e.what()) << "\n";
    return kExitRuntime;
  }
}

}  // namespace spar::cli
