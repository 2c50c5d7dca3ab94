#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "qnet/domain.hpp"

namespace qnet {

/// Flat store of all trainable parameters, addressed by named slices, plus
/// the Adam moment accumulators that travel with them.
class ParameterStore {
 public:
  struct Slice {
    std::string name;
    std::size_t offset = 0;
    std::size_t size = 0;
  };

  /// Registers a named slice and returns its offset.
  std::size_t add(const std::string& name, std::size_t count);

  std::size_t size() const { return values.size(); }
  const std::vector<Slice>& slices() const { return slices_; }
  /// Name of the slice containing a flat index (diagnostics).
  const std::string& slice_name_at(std::size_t index) const;

  std::vector<double> values;
  std::vector<double> adam_m;
  std::vector<double> adam_v;
  std::int64_t adam_steps = 0;

 private:
  std::vector<Slice> slices_;
};

enum class Activation { identity, relu };

/// Single fully connected layer; weights live in a ParameterStore.
struct DenseLayer {
  int in_dim = 0;
  int out_dim = 0;
  Activation activation = Activation::identity;
  std::size_t w_offset = 0;  // out_dim x in_dim, row major
  std::size_t b_offset = 0;  // out_dim

  static DenseLayer create(ParameterStore& store, const std::string& name, int in_dim,
                           int out_dim, Activation activation);
  void init(ParameterStore& store, std::mt19937_64& rng) const;
  std::size_t parameter_count() const {
    return static_cast<std::size_t>(out_dim) * in_dim + out_dim;
  }
};

/// Gated recurrent unit cell with the convention
///   z = sigmoid(Wz x + Uz h + bz)
///   r = sigmoid(Wr x + Ur h + br)
///   c = tanh(Wh x + Uh (r .* h) + bh)
///   h' = (1 - z) .* h + z .* c
struct GruCell {
  int in_dim = 0;
  int hidden_dim = 0;
  std::size_t wz = 0, uz = 0, bz = 0;
  std::size_t wr = 0, ur = 0, br = 0;
  std::size_t wh = 0, uh = 0, bh = 0;

  static GruCell create(ParameterStore& store, const std::string& name, int in_dim,
                        int hidden_dim);
  void init(ParameterStore& store, std::mt19937_64& rng) const;
  std::size_t parameter_count() const {
    return 3 * (static_cast<std::size_t>(hidden_dim) * in_dim +
                static_cast<std::size_t>(hidden_dim) * hidden_dim + hidden_dim);
  }
};

// Tape-free forward kernels; the tape records these same computations so
// traced and untraced passes produce bit-identical values.
void fc_apply(const ParameterStore& store, const DenseLayer& layer,
              std::span<const double> x, std::span<double> y);
struct GruGates {
  std::vector<double> z, r, c;
};
void gru_apply(const ParameterStore& store, const GruCell& cell, std::span<const double> x,
               std::span<const double> h, std::span<double> h_new,
               GruGates* gates = nullptr);

using NodeId = std::size_t;

/// Records one forward pass and replays it in reverse for gradients.
/// Parameter gradients accumulate into a flat buffer aligned with the store;
/// node gradients stay available for chaining recursions within a window.
class Tape {
 public:
  explicit Tape(const ParameterStore& store);

  /// Drops all recorded nodes/ops and zeroes parameter gradients
  /// (capacity is kept).
  void reset();

  NodeId input(std::vector<double> values);
  NodeId scalar_input(double value);
  std::size_t node_count() const { return values_.size(); }
  const std::vector<double>& value(NodeId id) const { return values_[id]; }
  const std::vector<double>& gradient(NodeId id) const { return grads_[id]; }

  NodeId fc(const DenseLayer& layer, NodeId x);
  NodeId gru(const GruCell& cell, NodeId x, NodeId h);
  NodeId concat(std::span<const NodeId> parts);
  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId affine(NodeId a, double scale, double shift);  // elementwise scale*x + shift
  NodeId gather(NodeId a, std::vector<std::size_t> indices);
  NodeId dot(NodeId a, NodeId b);  // size-1 output
  NodeId clamp(NodeId a, double lo, double hi);  // subgradient 0 outside [lo, hi]
  /// y = f(x) for scalar x with caller-supplied values and dy/dx.
  NodeId mapped_scalar(NodeId x, std::vector<double> y, std::vector<double> dy_dx);

  void accumulate_output_grad(NodeId id, std::span<const double> grad);
  /// Reverse pass over everything recorded so far. Errors when nothing was
  /// recorded.
  void run_backward();
  const std::vector<double>& param_grads() const { return param_grads_; }
  std::vector<double>& param_grads() { return param_grads_; }

 private:
  NodeId push_node(std::vector<double> values);

  const ParameterStore* store_;
  std::vector<std::vector<double>> values_;
  std::vector<std::vector<double>> grads_;
  std::vector<std::function<void()>> ops_;
  std::vector<double> param_grads_;
  bool backward_run_ = false;
};

struct AdamConfig {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Standard bias-corrected Adam update. Non-finite gradients raise a
/// NumericError naming the slices involved.
void adam_step(ParameterStore& store, std::span<const double> gradients,
               const AdamConfig& config = {});

/// Scales gradients so their global L2 norm is at most max_norm.
void clip_gradient_norm(std::span<double> gradients, double max_norm);

}  // namespace qnet
