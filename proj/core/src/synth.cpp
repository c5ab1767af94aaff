#include "spar/synth.hpp"

#include <cmath>
#include <numeric>

#include "spar/errors.hpp"

namespace spar {

namespace {
constexpr double kTwoPi = 6.283185307179586476925286766559;
}

void SynthConfig::validate() const {
  require(!modalities.empty(), "synthetic config needs at least one modality");
  require(spatial_dim == 2 || spatial_dim == 3, "spatial dim must be 2 or 3");
  require(half_width > 0.0, "area half-width must be positive");
  require(gain_min > 0.0 && gain_max >= gain_min, "gains must satisfy 0 < g_min <= g_max");
  require(tilt_max >= tilt_min, "tilt range is empty");
  require(classes >= 1, "at least one class is required");
  require(amplitude_min > 0.0 && amplitude_max >= amplitude_min, "amplitudes must satisfy 0 < A_min <= A_max");
  require(reference_distance > 0.0 && decay > 0.0, "reference distance and decay must be positive");
  require(frequency_base > 0.0 && frequency_step >= 0.0, "class frequencies must be positive");
  require(layout_pool >= 1 && samples >= 1, "layout pool and sample count must be positive");
  for (const auto& m : modalities) {
    require(m.nodes >= 2, "modality '" + m.name + "' needs at least 2 nodes");
    require(m.speed > 0.0 && m.sample_rate > 0.0, "propagation speed and sample rate must be positive");
    require(m.noise >= 0.0, "noise floor must be non-negative");
    require(m.tokens > 0 && m.token_dim > 0, "token extents must be positive");
  }
}

SynthConfig SynthConfig::defaults() {
  SynthConfig c;
  c.modalities = {
      SensorModality{"fast", 6, 340.0, 200.0, 0.02, 8, 16},
      SensorModality{"slow", 6, 250.0, 100.0, 0.02, 8, 8},
  };
  return c;
}

Tensor SceneSpec::layout(std::size_t k) const {
  const auto& nodes = modalities.at(k);
  const std::size_t ds = nodes.front().position.size();
  Tensor out({nodes.size(), ds});
  for (std::size_t i = 0; i < nodes.size(); ++i)
    for (std::size_t j = 0; j < ds; ++j) out.at(i, j) = nodes[i].position[j];
  return out;
}

SceneSpec sample_scene(const SynthConfig& config, Rng& rng) {
  config.validate();
  SceneSpec scene;
  scene.half_width = config.half_width;
  const double log_lo = std::log(config.gain_min), log_hi = std::log(config.gain_max);
  for (const auto& m : config.modalities) {
    std::vector<SensorNode> nodes(m.nodes);
    for (auto& node : nodes) {
      for (std::size_t j = 0; j < config.spatial_dim; ++j)
        node.position.push_back(uniform(rng, -config.half_width, config.half_width));
      node.gain = std::exp(uniform(rng, log_lo, log_hi));
      node.tilt = uniform(rng, config.tilt_min, config.tilt_max);
    }
    scene.modalities.push_back(std::move(nodes));
  }
  return scene;
}

double class_frequency(const SynthConfig& config, std::size_t cls) {
  return config.frequency_base + config.frequency_step * static_cast<double>(cls);
}

double class_waveform(const SynthConfig& config, std::size_t cls, double tilt, double t) {
  if (t < 0.0) return 0.0;
  const double f = class_frequency(config, cls);
  const double tau = config.decay * (1.0 + 0.5 * static_cast<double>(cls));
  return std::exp(-t / tau) * (std::sin(kTwoPi * f * t) + tilt * std::sin(2.0 * kTwoPi * f * t));
}

double attenuation(const SynthConfig& config, double distance) {
  return 1.0 / (1.0 + distance / config.reference_distance);
}

double euclidean(const std::vector<double>& a, const std::vector<double>& b) {
  require(a.size() == b.size(), "euclidean: dimension mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

std::vector<NodeWaveforms> synthesize(const SynthConfig& config, const SceneSpec& scene, const SourceEvent& event,
                                      Rng& rng) {
  for (double x : event.position) {
    require(std::abs(x) <= scene.half_width, "source event lies outside the sensing area");
  }
  std::vector<NodeWaveforms> out;
  for (std::size_t k = 0; k < config.modalities.size(); ++k) {
    const auto& mod = config.modalities[k];
    const std::size_t len = mod.window();
    NodeWaveforms waves;
    for (const auto& node : scene.modalities.at(k)) {
      const double r = euclidean(event.position, node.position);
      const double arrival = config.onset + r / mod.speed;
      const double amp = node.gain * event.amplitude * attenuation(config, r);
      std::vector<double> w(len);
      for (std::size_t s = 0; s < len; ++s) {
        const double t = static_cast<double>(s) / mod.sample_rate;
        w[s] = amp * class_waveform(config, event.cls, node.tilt, t - arrival);
        if (mod.noise > 0.0) w[s] += normal(rng, 0.0, mod.noise);
      }
      waves.push_back(std::move(w));
    }
    out.push_back(std::move(waves));
  }
  return out;
}

Tensor tokenize(const std::vector<double>& waveform, std::size_t tokens, std::size_t token_dim) {
  if (waveform.size() != tokens * token_dim) {
    throw ContractError("tokenize: waveform has " + std::to_string(waveform.size()) + " samples, expected " +
                        std::to_string(tokens) + " x " + std::to_string(token_dim));
  }
  const double n = static_cast<double>(waveform.size());
  const double mean = std::accumulate(waveform.begin(), waveform.end(), 0.0) / n;
  double var = 0.0;
  for (double v : waveform) var += (v - mean) * (v - mean);
  const double sd = std::max(std::sqrt(var / n), 1e-9);
  Tensor out({tokens, token_dim});
  for (std::size_t i = 0; i < waveform.size(); ++i) out[i] = (waveform[i] - mean) / sd;
  return out;
}

TokenGrid tokenize_modality(const NodeWaveforms& waves, std::size_t tokens, std::size_t token_dim) {
  require(!waves.empty(), "tokenize_modality: no nodes");
  std::vector<double> window;
  window.reserve(waves.size() * tokens * token_dim);
  for (const auto& w : waves) {
    if (w.size() != tokens * token_dim) {
      throw ContractError("tokenize: waveform has " + std::to_string(w.size()) + " samples, expected " +
                          std::to_string(tokens) + " x " + std::to_string(token_dim));
    }
    window.insert(window.end(), w.begin(), w.end());
  }
  TokenGrid grid(waves.size(), tokens, token_dim);
  grid.values = tokenize(window, waves.size() * tokens, token_dim);
  return grid;
}

Dataset make_dataset(const SynthConfig& config, std::uint64_t seed) {
  config.validate();
  Dataset ds;
  ds.spatial_dim = config.spatial_dim;
  ds.classes = config.classes;
  ds.layout_pool = config.layout_pool;
  for (const auto& m : config.modalities) {
    ds.nodes.push_back(m.nodes);
    ds.tokens.push_back(m.tokens);
    ds.token_dims.push_back(m.token_dim);
  }

  Rng scene_rng(derive_seed(seed, 0));
  std::vector<SceneSpec> scenes;
  for (std::size_t l = 0; l < config.layout_pool; ++l) scenes.push_back(sample_scene(config, scene_rng));

  const double log_a_lo = std::log(config.amplitude_min), log_a_hi = std::log(config.amplitude_max);
  ds.samples.reserve(config.samples);
  for (std::size_t s = 0; s < config.samples; ++s) {
    const std::uint64_t sample_seed = derive_seed(seed, s + 1);
    Rng rng(sample_seed);
    SyntheticSample out;
    out.seed = sample_seed;
    out.scene = uniform_index(rng, config.layout_pool);
    const SceneSpec& scene = scenes[out.scene];
    SourceEvent ev;
    ev.cls = uniform_index(rng, config.classes);
    for (std::size_t j = 0; j < config.spatial_dim; ++j)
      ev.position.push_back(uniform(rng, -config.half_width, config.half_width));
    ev.amplitude = std::exp(uniform(rng, log_a_lo, log_a_hi));
    auto waves = synthesize(config, scene, ev, rng);

    for (std::size_t k = 0; k < config.modalities.size(); ++k) {
      const auto& mod = config.modalities[k];
      TokenGrid grid = tokenize_modality(waves[k], mod.tokens, mod.token_dim);
      std::vector<std::uint64_t> ids;
      std::vector<double> energy;
      for (std::size_t i = 0; i < mod.nodes; ++i) {
        ids.push_back(static_cast<std::uint64_t>(out.scene * mod.nodes + i));
        double e = 0.0;
        for (double v : waves[k][i]) e += v * v;
        energy.push_back(e);
      }
      out.grids.push_back(std::move(grid));
      out.layouts.push_back(scene.layout(k));
      out.node_ids.push_back(std::move(ids));
      out.node_energy.push_back(std::move(energy));
    }
    out.source_position = ev.position;
    out.cls = ev.cls;
    ds.samples.push_back(std::move(out));
  }
  return ds;
}

SyntheticSample apply_message_drop(const SyntheticSample& sample, double p_drop, Rng& rng) {
  require(p_drop >= 0.0 && p_drop < 1.0, "drop probability must lie in [0, 1)");
  SyntheticSample out = sample;
  if (p_drop == 0.0) return out;
  for (auto& grid : out.grids) {
    std::vector<std::uint8_t> drop(grid.nodes);
    for (;;) {
      std::size_t survivors = 0;
      for (std::size_t i = 0; i < grid.nodes; ++i) {
        drop[i] = uniform01(rng) < p_drop ? 1 : 0;
        survivors += drop[i] ? 0 : 1;
      }
      if (survivors > 0) break;
    }
    for (std::size_t i = 0; i < grid.nodes; ++i)
      if (drop[i]) grid.drop_node(i);
  }
  return out;
}

std::vector<double> nearest_node_guess(const SyntheticSample& sample) {
  double best = -1.0;
  std::vector<double> guess;
  for (std::size_t k = 0; k < sample.layouts.size(); ++k) {
    for (std::size_t i = 0; i < sample.node_energy[k].size(); ++i) {
      if (sample.node_energy[k][i] > best) {
        best = sample.node_energy[k][i];
        auto row = sample.layouts[k].row(i);
        guess.assign(row.begin(), row.end());
      }
    }
  }
  return guess;
}

}  // namespace spar
