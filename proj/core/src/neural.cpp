#include "qnet/neural.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

namespace qnet {

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void init_uniform(ParameterStore& store, std::size_t offset, std::size_t count,
                  int fan_in, std::mt19937_64& rng) {
  const double bound = std::sqrt(1.0 / std::max(1, fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (std::size_t i = 0; i < count; ++i) store.values[offset + i] = dist(rng);
}

}  // namespace

std::size_t ParameterStore::add(const std::string& name, std::size_t count) {
  for (const auto& s : slices_) {
    if (s.name == name) throw DataError("parameter slice '" + name + "' already exists");
  }
  const std::size_t offset = values.size();
  slices_.push_back({name, offset, count});
  values.resize(offset + count, 0.0);
  adam_m.resize(values.size(), 0.0);
  adam_v.resize(values.size(), 0.0);
  return offset;
}

const std::string& ParameterStore::slice_name_at(std::size_t index) const {
  for (const auto& s : slices_) {
    if (index >= s.offset && index < s.offset + s.size) return s.name;
  }
  throw DataError("parameter index " + std::to_string(index) + " outside all slices");
}

DenseLayer DenseLayer::create(ParameterStore& store, const std::string& name, int in_dim,
                              int out_dim, Activation activation) {
  if (in_dim <= 0 || out_dim <= 0) {
    throw DataError("dense layer '" + name + "' needs positive dimensions");
  }
  DenseLayer layer;
  layer.in_dim = in_dim;
  layer.out_dim = out_dim;
  layer.activation = activation;
  layer.w_offset = store.add(name + ".W", static_cast<std::size_t>(out_dim) * in_dim);
  layer.b_offset = store.add(name + ".b", static_cast<std::size_t>(out_dim));
  return layer;
}

void DenseLayer::init(ParameterStore& store, std::mt19937_64& rng) const {
  init_uniform(store, w_offset, static_cast<std::size_t>(out_dim) * in_dim, in_dim, rng);
  init_uniform(store, b_offset, static_cast<std::size_t>(out_dim), in_dim, rng);
}

GruCell GruCell::create(ParameterStore& store, const std::string& name, int in_dim,
                        int hidden_dim) {
  if (in_dim <= 0 || hidden_dim <= 0) {
    throw DataError("GRU cell '" + name + "' needs positive dimensions");
  }
  GruCell cell;
  cell.in_dim = in_dim;
  cell.hidden_dim = hidden_dim;
  const auto hi = static_cast<std::size_t>(hidden_dim) * in_dim;
  const auto hh = static_cast<std::size_t>(hidden_dim) * hidden_dim;
  const auto h = static_cast<std::size_t>(hidden_dim);
  cell.wz = store.add(name + ".Wz", hi);
  cell.uz = store.add(name + ".Uz", hh);
  cell.bz = store.add(name + ".bz", h);
  cell.wr = store.add(name + ".Wr", hi);
  cell.ur = store.add(name + ".Ur", hh);
  cell.br = store.add(name + ".br", h);
  cell.wh = store.add(name + ".Wh", hi);
  cell.uh = store.add(name + ".Uh", hh);
  cell.bh = store.add(name + ".bh", h);
  return cell;
}

void GruCell::init(ParameterStore& store, std::mt19937_64& rng) const {
  const auto hi = static_cast<std::size_t>(hidden_dim) * in_dim;
  const auto hh = static_cast<std::size_t>(hidden_dim) * hidden_dim;
  const auto h = static_cast<std::size_t>(hidden_dim);
  for (auto off : {wz, wr, wh}) init_uniform(store, off, hi, in_dim, rng);
  for (auto off : {uz, ur, uh}) init_uniform(store, off, hh, hidden_dim, rng);
  for (auto off : {bz, br, bh}) init_uniform(store, off, h, hidden_dim, rng);
}

void fc_apply(const ParameterStore& store, const DenseLayer& layer,
              std::span<const double> x, std::span<double> y) {
  if (x.size() != static_cast<std::size_t>(layer.in_dim) ||
      y.size() != static_cast<std::size_t>(layer.out_dim)) {
    throw DataError("fc_apply: dimension mismatch");
  }
  const double* w = store.values.data() + layer.w_offset;
  const double* b = store.values.data() + layer.b_offset;
  for (int o = 0; o < layer.out_dim; ++o) {
    double acc = b[o];
    const double* row = w + static_cast<std::size_t>(o) * layer.in_dim;
    for (int i = 0; i < layer.in_dim; ++i) acc += row[i] * x[i];
    y[o] = (layer.activation == Activation::relu) ? std::max(0.0, acc) : acc;
  }
}

void gru_apply(const ParameterStore& store, const GruCell& cell, std::span<const double> x,
               std::span<const double> h, std::span<double> h_new, GruGates* gates) {
  const auto in = static_cast<std::size_t>(cell.in_dim);
  const auto hd = static_cast<std::size_t>(cell.hidden_dim);
  if (x.size() != in || h.size() != hd || h_new.size() != hd) {
    throw DataError("gru_apply: dimension mismatch");
  }
  const double* v = store.values.data();
  std::vector<double> z(hd), r(hd), c(hd);
  auto gate_pre = [&](std::size_t w_off, std::size_t u_off, std::size_t b_off,
                      std::span<const double> hvec, std::size_t j) {
    double acc = v[b_off + j];
    const double* wr_ = v + w_off + j * in;
    for (std::size_t i = 0; i < in; ++i) acc += wr_[i] * x[i];
    const double* ur_ = v + u_off + j * hd;
    for (std::size_t k = 0; k < hd; ++k) acc += ur_[k] * hvec[k];
    return acc;
  };
  for (std::size_t j = 0; j < hd; ++j) z[j] = sigmoid(gate_pre(cell.wz, cell.uz, cell.bz, h, j));
  for (std::size_t j = 0; j < hd; ++j) r[j] = sigmoid(gate_pre(cell.wr, cell.ur, cell.br, h, j));
  std::vector<double> rh(hd);
  for (std::size_t k = 0; k < hd; ++k) rh[k] = r[k] * h[k];
  for (std::size_t j = 0; j < hd; ++j) {
    c[j] = std::tanh(gate_pre(cell.wh, cell.uh, cell.bh, rh, j));
  }
  for (std::size_t j = 0; j < hd; ++j) h_new[j] = (1.0 - z[j]) * h[j] + z[j] * c[j];
  if (gates) {
    gates->z = std::move(z);
    gates->r = std::move(r);
    gates->c = std::move(c);
  }
}

Tape::Tape(const ParameterStore& store)
    : store_(&store), param_grads_(store.size(), 0.0) {}

void Tape::reset() {
  values_.clear();
  grads_.clear();
  ops_.clear();
  param_grads_.assign(store_->size(), 0.0);
  backward_run_ = false;
}

NodeId Tape::push_node(std::vector<double> values) {
  values_.push_back(std::move(values));
  grads_.emplace_back(values_.back().size(), 0.0);
  return values_.size() - 1;
}

NodeId Tape::input(std::vector<double> values) { return push_node(std::move(values)); }

NodeId Tape::scalar_input(double value) { return push_node({value}); }

NodeId Tape::fc(const DenseLayer& layer, NodeId x) {
  std::vector<double> y(static_cast<std::size_t>(layer.out_dim));
  fc_apply(*store_, layer, values_[x], y);
  const NodeId out = push_node(std::move(y));
  ops_.push_back([this, layer, x, out] {
    const auto& dy = grads_[out];
    const auto& yv = values_[out];
    const auto& xv = values_[x];
    auto& dx = grads_[x];
    const double* w = store_->values.data() + layer.w_offset;
    double* dw = param_grads_.data() + layer.w_offset;
    double* db = param_grads_.data() + layer.b_offset;
    for (int o = 0; o < layer.out_dim; ++o) {
      double d = dy[static_cast<std::size_t>(o)];
      if (layer.activation == Activation::relu && yv[static_cast<std::size_t>(o)] <= 0.0) {
        d = 0.0;
      }
      if (d == 0.0) continue;
      db[o] += d;
      const double* row = w + static_cast<std::size_t>(o) * layer.in_dim;
      double* drow = dw + static_cast<std::size_t>(o) * layer.in_dim;
      for (int i = 0; i < layer.in_dim; ++i) {
        drow[i] += d * xv[static_cast<std::size_t>(i)];
        dx[static_cast<std::size_t>(i)] += d * row[i];
      }
    }
  });
  return out;
}

NodeId Tape::gru(const GruCell& cell, NodeId x, NodeId h) {
  const auto hd = static_cast<std::size_t>(cell.hidden_dim);
  std::vector<double> h_new(hd);
  auto gates = std::make_shared<GruGates>();
  gru_apply(*store_, cell, values_[x], values_[h], h_new, gates.get());
  const NodeId out = push_node(std::move(h_new));
  ops_.push_back([this, cell, x, h, out, gates] {
    const auto in = static_cast<std::size_t>(cell.in_dim);
    const auto hd2 = static_cast<std::size_t>(cell.hidden_dim);
    const auto& dh_new = grads_[out];
    const auto& xv = values_[x];
    const auto& hv = values_[h];
    auto& dx = grads_[x];
    auto& dh = grads_[h];
    const auto& z = gates->z;
    const auto& r = gates->r;
    const auto& c = gates->c;
    const double* v = store_->values.data();
    double* g = param_grads_.data();

    std::vector<double> da_c(hd2), da_z(hd2), da_r(hd2), drh(hd2, 0.0);
    for (std::size_t j = 0; j < hd2; ++j) {
      const double dzj = dh_new[j] * (c[j] - hv[j]);
      const double dcj = dh_new[j] * z[j];
      dh[j] += dh_new[j] * (1.0 - z[j]);
      da_c[j] = dcj * (1.0 - c[j] * c[j]);
      da_z[j] = dzj * z[j] * (1.0 - z[j]);
    }
    // candidate gate: Wh x + Uh (r.*h) + bh
    for (std::size_t j = 0; j < hd2; ++j) {
      const double d = da_c[j];
      if (d == 0.0) continue;
      g[cell.bh + j] += d;
      for (std::size_t i = 0; i < in; ++i) {
        g[cell.wh + j * in + i] += d * xv[i];
        dx[i] += d * v[cell.wh + j * in + i];
      }
      for (std::size_t k = 0; k < hd2; ++k) {
        g[cell.uh + j * hd2 + k] += d * r[k] * hv[k];
        drh[k] += d * v[cell.uh + j * hd2 + k];
      }
    }
    for (std::size_t k = 0; k < hd2; ++k) {
      da_r[k] = drh[k] * hv[k] * r[k] * (1.0 - r[k]);
      dh[k] += drh[k] * r[k];
    }
    auto backprop_gate = [&](std::size_t w_off, std::size_t u_off, std::size_t b_off,
                             const std::vector<double>& da) {
      for (std::size_t j = 0; j < hd2; ++j) {
        const double d = da[j];
        if (d == 0.0) continue;
        g[b_off + j] += d;
        for (std::size_t i = 0; i < in; ++i) {
          g[w_off + j * in + i] += d * xv[i];
          dx[i] += d * v[w_off + j * in + i];
        }
        for (std::size_t k = 0; k < hd2; ++k) {
          g[u_off + j * hd2 + k] += d * hv[k];
          dh[k] += d * v[u_off + j * hd2 + k];
        }
      }
    };
    backprop_gate(cell.wz, cell.uz, cell.bz, da_z);
    backprop_gate(cell.wr, cell.ur, cell.br, da_r);
  });
  return out;
}

NodeId Tape::concat(std::span<const NodeId> parts) {
  std::vector<double> out;
  for (NodeId p : parts) {
    out.insert(out.end(), values_[p].begin(), values_[p].end());
  }
  std::vector<NodeId> part_ids(parts.begin(), parts.end());
  const NodeId id = push_node(std::move(out));
  ops_.push_back([this, part_ids, id] {
    const auto& dy = grads_[id];
    std::size_t at = 0;
    for (NodeId p : part_ids) {
      auto& dp = grads_[p];
      for (std::size_t i = 0; i < dp.size(); ++i) dp[i] += dy[at + i];
      at += dp.size();
    }
  });
  return id;
}

NodeId Tape::add(NodeId a, NodeId b) {
  if (values_[a].size() != values_[b].size()) throw DataError("tape add: size mismatch");
  std::vector<double> out(values_[a].size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = values_[a][i] + values_[b][i];
  const NodeId id = push_node(std::move(out));
  ops_.push_back([this, a, b, id] {
    const auto& dy = grads_[id];
    for (std::size_t i = 0; i < dy.size(); ++i) {
      grads_[a][i] += dy[i];
      grads_[b][i] += dy[i];
    }
  });
  return id;
}

NodeId Tape::sub(NodeId a, NodeId b) {
  if (values_[a].size() != values_[b].size()) throw DataError("tape sub: size mismatch");
  std::vector<double> out(values_[a].size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = values_[a][i] - values_[b][i];
  const NodeId id = push_node(std::move(out));
  ops_.push_back([this, a, b, id] {
    const auto& dy = grads_[id];
    for (std::size_t i = 0; i < dy.size(); ++i) {
      grads_[a][i] += dy[i];
      grads_[b][i] -= dy[i];
    }
  });
  return id;
}

NodeId Tape::affine(NodeId a, double scale, double shift) {
  std::vector<double> out(values_[a].size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = scale * values_[a][i] + shift;
  const NodeId id = push_node(std::move(out));
  ops_.push_back([this, a, id, scale] {
    const auto& dy = grads_[id];
    for (std::size_t i = 0; i < dy.size(); ++i) grads_[a][i] += scale * dy[i];
  });
  return id;
}

NodeId Tape::gather(NodeId a, std::vector<std::size_t> indices) {
  std::vector<double> out(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= values_[a].size()) throw DataError("tape gather: index out of range");
    out[i] = values_[a][indices[i]];
  }
  const NodeId id = push_node(std::move(out));
  ops_.push_back([this, a, id, indices = std::move(indices)] {
    const auto& dy = grads_[id];
    for (std::size_t i = 0; i < indices.size(); ++i) grads_[a][indices[i]] += dy[i];
  });
  return id;
}

NodeId Tape::dot(NodeId a, NodeId b) {
  if (values_[a].size() != values_[b].size()) throw DataError("tape dot: size mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < values_[a].size(); ++i) acc += values_[a][i] * values_[b][i];
  const NodeId id = push_node({acc});
  ops_.push_back([this, a, b, id] {
    const double d = grads_[id][0];
    if (d == 0.0) return;
    for (std::size_t i = 0; i < values_[a].size(); ++i) {
      grads_[a][i] += d * values_[b][i];
      grads_[b][i] += d * values_[a][i];
    }
  });
  return id;
}

NodeId Tape::clamp(NodeId a, double lo, double hi) {
  std::vector<double> out(values_[a].size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = std::min(std::max(values_[a][i], lo), hi);
  }
  const NodeId id = push_node(std::move(out));
  ops_.push_back([this, a, id, lo, hi] {
    const auto& dy = grads_[id];
    const auto& xv = values_[a];
    for (std::size_t i = 0; i < dy.size(); ++i) {
      if (xv[i] >= lo && xv[i] <= hi) grads_[a][i] += dy[i];
    }
  });
  return id;
}

NodeId Tape::mapped_scalar(NodeId x, std::vector<double> y, std::vector<double> dy_dx) {
  if (values_[x].size() != 1) throw DataError("mapped_scalar: input must be scalar");
  if (y.size() != dy_dx.size()) throw DataError("mapped_scalar: jacobian size mismatch");
  const NodeId id = push_node(std::move(y));
  ops_.push_back([this, x, id, dy_dx = std::move(dy_dx)] {
    const auto& dy = grads_[id];
    double acc = 0.0;
    for (std::size_t i = 0; i < dy.size(); ++i) acc += dy[i] * dy_dx[i];
    grads_[x][0] += acc;
  });
  return id;
}

void Tape::accumulate_output_grad(NodeId id, std::span<const double> grad) {
  auto& g = grads_[id];
  if (grad.size() != g.size()) throw DataError("output grad size mismatch");
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += grad[i];
}

void Tape::run_backward() {
  if (ops_.empty() && values_.empty()) {
    throw NumericError("backward requested before any forward pass was recorded");
  }
  if (backward_run_) {
    throw NumericError("backward already ran on this tape; reset before reuse");
  }
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
  backward_run_ = true;
}

void adam_step(ParameterStore& store, std::span<const double> gradients,
               const AdamConfig& config) {
  if (gradients.size() != store.size()) {
    throw DataError("adam_step: gradient length " + std::to_string(gradients.size()) +
                    " differs from parameter count " + std::to_string(store.size()));
  }
  for (std::size_t i = 0; i < gradients.size(); ++i) {
    if (!std::isfinite(gradients[i])) {
      throw NumericError("adam_step: non-finite gradient in slice '" +
                         store.slice_name_at(i) + "' at flat index " + std::to_string(i));
    }
  }
  store.adam_steps += 1;
  const double t = static_cast<double>(store.adam_steps);
  const double corr1 = 1.0 - std::pow(config.beta1, t);
  const double corr2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t i = 0; i < gradients.size(); ++i) {
    const double gr = gradients[i];
    store.adam_m[i] = config.beta1 * store.adam_m[i] + (1.0 - config.beta1) * gr;
    store.adam_v[i] = config.beta2 * store.adam_v[i] + (1.0 - config.beta2) * gr * gr;
    const double m_hat = store.adam_m[i] / corr1;
    const double v_hat = store.adam_v[i] / corr2;
    store.values[i] -= config.lr * m_hat / (std::sqrt(v_hat) + config.epsilon);
  }
}

void clip_gradient_norm(std::span<double> gradients, double max_norm) {
  double sq = 0.0;
  for (double g : gradients) sq += g * g;
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double scale = max_norm / norm;
    for (double& g : gradients) g *= scale;
  }
}

}  // namespace qnet
