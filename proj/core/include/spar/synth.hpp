#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "spar/embedding.hpp"
#include "spar/rng.hpp"
#include "spar/tensor.hpp"

namespace spar {

struct SensorModality {
  std::string name;
  std::size_t nodes = 6;
  double speed = 340.0;        // propagation speed, m/s
  double sample_rate = 200.0;  // Hz
  double noise = 0.02;         // white-noise standard deviation
  std::size_t tokens = 8;
  std::size_t token_dim = 16;

  std::size_t window() const { return tokens * token_dim; }
};

struct SynthConfig {
  std::vector<SensorModality> modalities;
  std::size_t spatial_dim = 2;
  double half_width = 50.0;  // meters
  double gain_min = 0.5;
  double gain_max = 2.0;
  double tilt_min = -0.8;
  double tilt_max = 0.8;
  std::size_t classes = 4;
  double amplitude_min = 0.5;
  double amplitude_max = 2.0;
  double reference_distance = 10.0;  // r0 in A / (1 + r / r0)
  double onset = 0.02;               // emission time within the window, s
  double decay = 0.5;                // base envelope time constant, s
  double frequency_base = 0.5;       // class 0 frequency, Hz
  double frequency_step = 0.5;       // added per class index, Hz
  std::size_t layout_pool = 4;
  std::size_t samples = 256;

  void validate() const;
  // Two modalities: fast/short-wavelength and slow/low-rate.
  static SynthConfig defaults();
};

struct SensorNode {
  std::vector<double> position;
  double gain = 1.0;
  double tilt = 0.0;
};

struct SceneSpec {
  double half_width = 0.0;
  std::vector<std::vector<SensorNode>> modalities;  // [modality][node]

  Tensor layout(std::size_t modality) const;
};

struct SourceEvent {
  std::vector<double> position;
  std::size_t cls = 0;
  double amplitude = 1.0;
};

// [node][sample] for one modality.
using NodeWaveforms = std::vector<std::vector<double>>;

struct SyntheticSample {
  std::vector<TokenGrid> grids;                       // per modality
  std::vector<Tensor> layouts;                        // per modality, meters, [n x d_S]
  std::vector<std::vector<std::uint64_t>> node_ids;   // per modality
  std::vector<std::vector<double>> node_energy;       // raw window energy per node
  std::vector<double> source_position;                // meters
  std::size_t cls = 0;
  std::size_t scene = 0;
  std::uint64_t seed = 0;
};

struct Dataset {
  std::size_t spatial_dim = 2;
  std::size_t classes = 0;
  std::size_t layout_pool = 0;
  std::vector<std::size_t> nodes;       // per modality
  std::vector<std::size_t> tokens;      // per modality
  std::vector<std::size_t> token_dims;  // per modality
  std::vector<SyntheticSample> samples;

  std::size_t modality_count() const { return nodes.size(); }
  // Structural table rows needed for modality k.
  std::size_t identities(std::size_t k) const { return layout_pool * nodes[k]; }
};

// Node positions uniform in the square/cube, gains log-uniform, tilts
// uniform.
SceneSpec sample_scene(const SynthConfig& config, Rng& rng);

// Class waveform with spectral tilt: decaying sinusoid at the class
// frequency plus tilt * its second harmonic. Zero before t = 0.
double class_waveform(const SynthConfig& config, std::size_t cls, double tilt, double t);
double class_frequency(const SynthConfig& config, std::size_t cls);
double attenuation(const SynthConfig& config, double distance);

/// w_i(t) = g_i * A / (1 + r_i / r0) * phi(t - onset - r_i / c; tilt_i) + noise.
std::vector<NodeWaveforms> synthesize(const SynthConfig& config, const SceneSpec& scene, const SourceEvent& event,
                                      Rng& rng);

// Splits one node's window into `tokens` segments of `token_dim` samples,
// standardized by the window mean and std (std floor 1e-9).
Tensor tokenize(const std::vector<double>& waveform, std::size_t tokens, std::size_t token_dim);

// Tokenizes every node of one modality with a single standardization over
// the whole window, so relative node amplitudes survive. Rows are node-major.
TokenGrid tokenize_modality(const NodeWaveforms& waves, std::size_t tokens, std::size_t token_dim);

Dataset make_dataset(const SynthConfig& config, std::uint64_t seed);

// Drops each node independently with probability `p_drop`; redraws the
// pattern of a modality if every node of it would be dropped.
SyntheticSample apply_message_drop(const SyntheticSample& sample, double p_drop, Rng& rng);

// Guess: position of the node with the largest raw window energy.
std::vector<double> nearest_node_guess(const SyntheticSample& sample);

double euclidean(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace spar
