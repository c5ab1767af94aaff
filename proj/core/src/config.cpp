#include "spar/config.hpp"

#include <charconv>
#include <cstdio>
#include <functional>
#include <sstream>

#include "spar/binary_io.hpp"
#include "spar/errors.hpp"

namespace spar {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::size_t parse_size(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw ContractError("config key '" + key + "' expects a non-negative integer, got '" + v + "'");
  }
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double out = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ContractError("config key '" + key + "' expects a number, got '" + v + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "on") return true;
  if (v == "0" || v == "false" || v == "off") return false;
  throw ContractError("config key '" + key + "' expects true/false, got '" + v + "'");
}

std::vector<double> parse_list(const std::string& key, const std::string& v) {
  std::vector<double> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_double(key, trim(item)));
  if (out.empty()) throw ContractError("config key '" + key + "' expects a comma-separated list");
  return out;
}

struct Entry {
  ConfigKey info;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define SPAR_SIZE(KEY, FIELD, DOC)                                                        \
  Entry {                                                                                 \
    {KEY, DOC}, [](RunConfig& c, const std::string& v) { c.FIELD = parse_size(KEY, v); }, \
        [](const RunConfig& c) { return std::to_string(c.FIELD); }                         \
  }
#define SPAR_DOUBLE(KEY, FIELD, DOC)                                                        \
  Entry {                                                                                   \
    {KEY, DOC}, [](RunConfig& c, const std::string& v) { c.FIELD = parse_double(KEY, v); }, \
        [](const RunConfig& c) { return fmt_double(c.FIELD); }                               \
  }
#define SPAR_BOOL(KEY, FIELD, DOC)                                                        \
  Entry {                                                                                 \
    {KEY, DOC}, [](RunConfig& c, const std::string& v) { c.FIELD = parse_bool(KEY, v); }, \
        [](const RunConfig& c) { return std::string(c.FIELD ? "true" : "false"); }         \
  }

const std::vector<Entry>& entries() {
  static const std::vector<Entry> table = {
      SPAR_SIZE("model.d", model_d, "transformer width"),
      SPAR_SIZE("model.heads", model_heads, "attention heads"),
      SPAR_SIZE("model.layers", model_layers, "per-modality encoder layers"),
      SPAR_SIZE("model.joint_layers", model_joint_layers, "joint encoder layers"),
      SPAR_SIZE("model.decoder_layers", model_decoder_layers, "layers per decoder"),
      SPAR_SIZE("model.ff", model_ff, "feedforward width"),
      SPAR_SIZE("model.d_r", model_d_r, "structural vector width"),
      SPAR_SIZE("data.modalities", data_modalities, "number of sensing modalities"),
      SPAR_SIZE("data.nodes", data_nodes, "nodes per modality"),
      SPAR_SIZE("data.tokens", data_tokens, "tokens per node"),
      SPAR_SIZE("data.token_dim", data_token_dim, "samples per token, 0 = modality default"),
      SPAR_SIZE("data.layout_pool", data_layout_pool, "distinct layouts (scenes)"),
      SPAR_SIZE("data.samples", data_samples, "generated samples"),
      SPAR_SIZE("data.classes", data_classes, "source classes"),
      SPAR_SIZE("data.spatial_dim", data_spatial_dim, "coordinate dimension, 2 or 3"),
      SPAR_DOUBLE("data.half_width", data_half_width, "area half-width in meters"),
      SPAR_DOUBLE("data.gain_min", data_gain_min, "smallest node gain"),
      SPAR_DOUBLE("data.gain_max", data_gain_max, "largest node gain"),
      SPAR_DOUBLE("data.noise", data_noise, "white-noise std of every modality"),
      SPAR_DOUBLE("data.freq_base", data_freq_base, "class 0 waveform frequency, Hz"),
      SPAR_DOUBLE("data.freq_step", data_freq_step, "frequency increment per class, Hz"),
      SPAR_DOUBLE("data.decay", data_decay, "base envelope time constant, s"),
      Entry{{"mask.strategy", "random | node-balanced | node-drop"},
            [](RunConfig& c, const std::string& v) { c.mask_strategy = mask_strategy_from_string(v); },
            [](const RunConfig& c) { return std::string(to_string(c.mask_strategy)); }},
      SPAR_DOUBLE("mask.ratio", mask_ratio, "masked fraction of present tokens"),
      SPAR_SIZE("mask.min_visible", mask_min_visible, "node-balanced minimum per node"),
      SPAR_SIZE("mask.drop_nodes", mask_drop_nodes, "nodes hidden by node-drop masking"),
      SPAR_SIZE("train.steps", train_steps, "pretraining steps"),
      SPAR_DOUBLE("train.lr", train_lr, "pretraining learning rate"),
      SPAR_SIZE("train.batch", train_batch, "pretraining batch size"),
      SPAR_BOOL("aug.enabled", aug_enabled, "random rotation + translation of layouts"),
      SPAR_BOOL("loss.spatial_enabled", loss_spatial_enabled, "spatial reconstruction objective"),
      SPAR_BOOL("embed.structural_enabled", embed_structural_enabled, "structural embeddings"),
      SPAR_SIZE("finetune.steps", finetune_steps, "head training steps"),
      SPAR_DOUBLE("finetune.lr", finetune_lr, "head learning rate"),
      SPAR_SIZE("finetune.batch", finetune_batch, "head batch size"),
      SPAR_DOUBLE("finetune.label_ratio", finetune_label_ratio, "fraction of training labels used"),
      SPAR_DOUBLE("eval.fraction", eval_fraction, "held-out fraction for evaluation"),
      SPAR_SIZE("eval.drop_repeats", eval_drop_repeats, "message-drop draws per eval sample"),
      SPAR_SIZE("probe.steps", probe_steps, "probe training steps"),
      SPAR_DOUBLE("probe.lr", probe_lr, "probe learning rate"),
      SPAR_SIZE("probe.batch", probe_batch, "probe batch size"),
      Entry{{"probe.noise_grid", "comma-separated noise magnitudes, normalized units"},
            [](RunConfig& c, const std::string& v) { c.probe_noise_grid = parse_list("probe.noise_grid", v); },
            [](const RunConfig& c) {
              std::string out;
              for (std::size_t i = 0; i < c.probe_noise_grid.size(); ++i) {
                if (i) out += ",";
                out += fmt_double(c.probe_noise_grid[i]);
              }
              return out;
            }},
      Entry{{"seed", "run seed"},
            [](RunConfig& c, const std::string& v) { c.seed = parse_size("seed", v); },
            [](const RunConfig& c) { return std::to_string(c.seed); }},
  };
  return table;
}

#undef SPAR_SIZE
#undef SPAR_DOUBLE
#undef SPAR_BOOL

}  // namespace

RunSeeds run_seeds(std::uint64_t seed) {
  return {seed,
          derive_seed(seed, 101),
          derive_seed(seed, 102),
          derive_seed(seed, 103),
          derive_seed(seed, 104),
          derive_seed(seed, 105)};
}

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> out;
    for (const auto& e : entries()) out.push_back(e.info);
    return out;
  }();
  return keys;
}

void RunConfig::validate() const {
  model(Dataset{data_spatial_dim, data_classes, data_layout_pool, {data_nodes}, {data_tokens}, {1}, {}})
      .validate();
  synth().validate();
  require(data_modalities >= 1 && data_modalities <= 4, "data.modalities must lie in [1, 4]");
  require(mask_ratio > 0.0 && mask_ratio < 1.0, "mask.ratio must lie in (0, 1)");
  require(train_batch > 0 && finetune_batch > 0 && probe_batch > 0, "batch sizes must be positive");
  require(finetune_label_ratio > 0.0 && finetune_label_ratio <= 1.0, "finetune.label_ratio must lie in (0, 1]");
  require(eval_fraction > 0.0 && eval_fraction < 1.0, "eval.fraction must lie in (0, 1)");
  require(eval_drop_repeats >= 1, "eval.drop_repeats must be positive");
}

SynthConfig RunConfig::synth() const {
  // Per-modality templates: propagation speed, sample rate, token dim.
  static const SensorModality templates[] = {
      {"fast", 0, 340.0, 200.0, 0.0, 0, 16},
      {"slow", 0, 250.0, 100.0, 0.0, 0, 8},
      {"fast2", 0, 500.0, 200.0, 0.0, 0, 16},
      {"slow2", 0, 150.0, 100.0, 0.0, 0, 8},
  };
  SynthConfig s;
  for (std::size_t k = 0; k < data_modalities && k < 4; ++k) {
    SensorModality m = templates[k];
    m.nodes = data_nodes;
    m.tokens = data_tokens;
    if (data_token_dim) m.token_dim = data_token_dim;
    m.noise = data_noise;
    s.modalities.push_back(m);
  }
  s.spatial_dim = data_spatial_dim;
  s.half_width = data_half_width;
  s.gain_min = data_gain_min;
  s.gain_max = data_gain_max;
  s.frequency_base = data_freq_base;
  s.frequency_step = data_freq_step;
  s.decay = data_decay;
  s.classes = data_classes;
  s.layout_pool = data_layout_pool;
  s.samples = data_samples;
  return s;
}

ModelConfig RunConfig::model(const Dataset& data) const {
  ModelConfig m;
  m.d = model_d;
  m.heads = model_heads;
  m.d_ff = model_ff;
  m.encoder_layers = model_layers;
  m.joint_layers = model_joint_layers;
  m.decoder_layers = model_decoder_layers;
  m.d_r = model_d_r;
  m.structural_enabled = embed_structural_enabled;
  return model_config_for(data, m);
}

PretrainConfig RunConfig::pretrain() const {
  PretrainConfig p;
  p.steps = train_steps;
  p.batch = train_batch;
  p.lr = train_lr;
  p.strategy = mask_strategy;
  p.mask_ratio = mask_ratio;
  p.min_visible_per_node = mask_min_visible;
  p.drop_nodes = mask_drop_nodes;
  p.augmentation = aug_enabled;
  p.spatial_objective = loss_spatial_enabled;
  p.seed = seeds().pretrain;
  return p;
}

FinetuneConfig RunConfig::finetune() const {
  FinetuneConfig f;
  f.steps = finetune_steps;
  f.batch = finetune_batch;
  f.lr = finetune_lr;
  f.label_ratio = finetune_label_ratio;
  f.seed = seeds().finetune;
  return f;
}

ProbeConfig RunConfig::probe() const {
  ProbeConfig p;
  p.noise_grid = probe_noise_grid;
  p.steps = probe_steps;
  p.batch = probe_batch;
  p.lr = probe_lr;
  p.seed = seeds().eval;
  return p;
}

RunConfig parse_config(const std::string& text) {
  RunConfig c;
  std::stringstream ss(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ContractError("config line " + std::to_string(lineno) + ": expected 'key = value'");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    bool found = false;
    for (const auto& e : entries()) {
      if (e.info.key == key) {
        e.set(c, value);
        found = true;
        break;
      }
    }
    if (!found) throw ContractError("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
  }
  c.validate();
  return c;
}

RunConfig load_config(const std::string& path) { return parse_config(io::read_file(path)); }

std::string config_to_text(const RunConfig& config) {
  std::string out = "# effective configuration\n";
  for (const auto& e : entries()) out += e.info.key + " = " + e.get(config) + "\n";
  return out;
}

}  // namespace spar
