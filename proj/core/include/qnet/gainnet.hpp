#pragma once

#include <filesystem>
#include <vector>

#include "qnet/neural.hpp"

namespace qnet {

inline constexpr int kGroupSize = 3;  // segment plus its two neighbours

/// Architecture widths. The three GRUs track process-noise, state and
/// measurement second moments; the five FC blocks lift features into them
/// and read the gain out. gain_hidden_width = 0 keeps the gain readout a
/// single linear layer.
struct GainNetConfig {
  int gru_hidden_q = 5;
  int gru_hidden_sigma = 5;
  int gru_hidden_s = 5;
  int update_width = 6;       // block a: lifts the forward update difference
  int evolution_width = 6;    // block b: lifts the forward evolution difference
  int measurement_width = 6;  // block c: lifts state covariance and speed features
  int gain_hidden_width = 0;  // block d: optional hidden layer before the gain
  int refine_width = 6;       // block e: refines the state-GRU hidden state
  void validate() const;
};

/// Closed-form trainable parameter count for a configuration.
std::size_t parameter_count(const GainNetConfig& config);

/// Inputs to one group's gain computation. Speed features are in m/s and
/// queue features in meters; scaling to network units happens inside.
struct GainFeatures {
  std::vector<double> d_meas;   // grouped measurement difference, size 3
  std::vector<double> d_innov;  // grouped innovation difference, size 3
  double d_evol = 0.0;          // forward evolution difference, meters
  double d_update = 0.0;        // forward update difference, meters
};

/// Per-group recurrent state. sigma hidden holds the refined value written
/// back by the hidden-state update block.
struct GainNetState {
  std::vector<double> hidden_q;
  std::vector<double> hidden_sigma;
  std::vector<double> hidden_s;
};

struct MeasurementGroup {
  std::size_t segment = 0;            // interior segment index (0-based)
  std::vector<double> d_meas;         // y_t - y_{t-1} over the trio
  std::vector<double> d_innov;        // y_t - y_pred over the trio
};

/// Feature scale factors that make one trained model transferable across
/// geometries: queue differences divide by q_max, speeds by v_free.
struct FeatureScaling {
  double q_max_m = 1.0;
  double v_free_mps = 1.0;
};

/// The five-block gain network; parameters live in the associated store and
/// are shared across measurement groups.
struct GainNet {
  GainNetConfig config;
  DenseLayer fc_update;     // a
  GruCell gru_q;            // a
  DenseLayer fc_evolution;  // b
  GruCell gru_sigma;        // b
  DenseLayer fc_sigma;      // c
  DenseLayer fc_speeds;     // c
  GruCell gru_s;            // c
  DenseLayer fc_gain_hidden;  // d, only when gain_hidden_width > 0
  DenseLayer fc_gain;         // d
  DenseLayer fc_refine_in;    // e
  DenseLayer fc_refine_out;   // e

  static GainNet create(ParameterStore& store, const GainNetConfig& config);
  void init(ParameterStore& store, std::mt19937_64& rng) const;
  GainNetState zero_state() const;
};

/// Builds the interior measurement groups for segments 1..N-2 (0-based);
/// boundary segments are excluded. N < 3 is a grouping error.
std::vector<MeasurementGroup> build_groups(std::span<const double> y_t,
                                           std::span<const double> y_prev,
                                           std::span<const double> y_pred);

struct GainResult {
  std::vector<double> gain;  // length 3
  GainNetState state;
};

/// Runs the a-e pipeline for one group without recording.
GainResult compute_gain(const ParameterStore& store, const GainNet& net,
                        const GainFeatures& features, const GainNetState& state,
                        const FeatureScaling& scaling);

struct TracedGainResult {
  NodeId gain;  // length 3
  NodeId hidden_q;
  NodeId hidden_sigma;  // refined by block e
  NodeId hidden_s;
};

/// Tape-recorded variant used in training. The innovation trio and the
/// d_evol/d_update scalars arrive as nodes so gradients flow through the
/// filter recursion; the measurement difference is data and enters as a
/// constant.
TracedGainResult compute_gain(Tape& tape, const GainNet& net,
                              const std::vector<double>& d_meas, NodeId d_innov_mps,
                              NodeId d_evol_m, NodeId d_update_m, NodeId hidden_q,
                              NodeId hidden_sigma, NodeId hidden_s,
                              const FeatureScaling& scaling);

/// x_prior + sum over groups of K^i . innovation^i (no clamping here).
double grouped_update(double x_prior_m, const std::vector<MeasurementGroup>& groups,
                      const std::vector<std::vector<double>>& gains);

// --- checkpoints -----------------------------------------------------------

/// Versioned JSON checkpoint: config, named slices and flat values. Loading
/// rebuilds the network and fails loudly on any shape mismatch.
void save_checkpoint(const std::filesystem::path& path, const GainNetConfig& config,
                     const ParameterStore& store);
struct Checkpoint {
  GainNetConfig config;
  ParameterStore store;
  GainNet net;
};
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace qnet
