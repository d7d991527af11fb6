#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "unigem/common.hpp"
#include "unigem/rng.hpp"
#include "unigem/schedule.hpp"
#include "unigem/tensor.hpp"

namespace unigem {

enum class Branch { growth, nucleation };

inline const char* branch_name(Branch b) {
  return b == Branch::growth ? "growth" : "nucleation";
}

struct DenoiserConfig {
  std::size_t hidden = 256;        // embedding size
  std::size_t layers = 9;          // total message-passing layers
  std::size_t shared_layers = 1;   // trunk depth k; each branch gets layers-k
  std::size_t atom_types = 5;      // H
  bool property_head = true;
  double coord_clip = 100.0;       // per-layer coordinate update norm cap

  void validate() const {
    if (hidden < 1) throw ConfigError("denoiser: hidden width must be >= 1");
    if (shared_layers < 1 || shared_layers >= layers)
      throw ConfigError("denoiser: need 1 <= shared_layers < layers");
    if (atom_types < 1) throw ConfigError("denoiser: atom_types must be >= 1");
  }

  bool operator==(const DenoiserConfig&) const = default;
};

template <class Real>
struct DenoiserOutput {
  Tensor<Real> eps_hat;     // M x 3, zero CoM
  Tensor<Real> node_feats;  // M x hidden, from the routed branch
  Branch branch;
};

/// Multi-branch E(n)-equivariant graph network. A shared trunk feeds two
/// branch stacks; the growth branch (t <= nucleation time) carries the
/// atom-type and property heads. The molecular graph is fully connected.
template <class Real>
class Denoiser {
 public:
  Denoiser(DenoiserConfig cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(derive_seed(seed, "denoiser-init"));
    const std::size_t w = cfg_.hidden;
    const std::size_t h = cfg_.atom_types;
    add_param("embed.w", {h + 1, w}, rng);
    add_param("embed.b", {w}, rng, InitKind::zero);
    auto add_layer = [&](const std::string& prefix) {
      add_param(prefix + ".edge.w1", {2 * w + 1, w}, rng);
      add_param(prefix + ".edge.b1", {w}, rng, InitKind::zero);
      add_param(prefix + ".edge.w2", {w, w}, rng);
      add_param(prefix + ".edge.b2", {w}, rng, InitKind::zero);
      add_param(prefix + ".coord.w1", {w, w}, rng);
      add_param(prefix + ".coord.b1", {w}, rng, InitKind::zero);
      add_param(prefix + ".coord.w2", {w, 1}, rng, InitKind::small_xavier);
      add_param(prefix + ".node.w1", {2 * w, w}, rng);
      add_param(prefix + ".node.b1", {w}, rng, InitKind::zero);
      add_param(prefix + ".node.w2", {w, w}, rng);
      add_param(prefix + ".node.b2", {w}, rng, InitKind::zero);
    };
    for (std::size_t l = 0; l < cfg_.shared_layers; ++l)
      add_layer("trunk." + std::to_string(l));
    const std::size_t branch_layers = cfg_.layers - cfg_.shared_layers;
    for (std::size_t l = 0; l < branch_layers; ++l)
      add_layer("growth." + std::to_string(l));
    for (std::size_t l = 0; l < branch_layers; ++l)
      add_layer("nucleation." + std::to_string(l));
    add_param("head.type.w1", {w, w}, rng);
    add_param("head.type.b1", {w}, rng, InitKind::zero);
    add_param("head.type.w2", {w, h}, rng);
    add_param("head.type.b2", {h}, rng, InitKind::zero);
    if (cfg_.property_head) {
      add_param("head.prop.w1", {w, w}, rng);
      add_param("head.prop.b1", {w}, rng, InitKind::zero);
      add_param("head.prop.w2", {w, 1}, rng);
      add_param("head.prop.b2", {1}, rng, InitKind::zero);
    }
  }

  const DenoiserConfig& config() const { return cfg_; }
  NamedTensors<Real>& params() { return params_; }
  const NamedTensors<Real>& params() const { return params_; }

  Tensor<Real>& param(const std::string& name) {
    const auto it = index_.find(name);
    if (it == index_.end())
      throw ConfigError("denoiser: no parameter named '" + name + "'");
    return params_[it->second].second;
  }
  const Tensor<Real>& param(const std::string& name) const {
    return const_cast<Denoiser*>(this)->param(name);
  }

  static bool is_head_param(const std::string& name) {
    return name.rfind("head.", 0) == 0;
  }

  void mark_all_trainable() {
    for (auto& [n, p] : params_) p.ensure_grad();
  }
  void zero_grads() {
    for (auto& [n, p] : params_) p.zero_grad();
  }

  /// Loads values from a (name, tensor) store; shape-checked against config.
  void load_params(const NamedTensors<Real>& source) {
    for (const auto& [name, t] : source) {
      const auto it = index_.find(name);
      if (it == index_.end())
        throw DataError("checkpoint parameter '" + name +
                        "' not in this configuration");
      Tensor<Real>& dst = params_[it->second].second;
      if (dst.shape() != t.shape())
        throw DataError("checkpoint parameter '" + name + "' has shape " +
                        shape_to_string(t.shape()) + ", expected " +
                        shape_to_string(dst.shape()));
      std::copy(t.data(), t.data() + t.size(), dst.data());
    }
  }

  Branch route(std::size_t t, const NoiseSchedule& sched) const {
    return sched.in_growth_phase(t) ? Branch::growth : Branch::nucleation;
  }

  /// Runs trunk + routed branch on zero-CoM coordinates. `type_feats` is the
  /// M x H node input block: zeros in coordinate-only mode (types unknown at
  /// sampling time), noisy one-hots in joint mode.
  DenoiserOutput<Real> forward(Tape<Real>& tape, const Tensor<Real>& coords,
                               const Tensor<Real>& type_feats, std::size_t t,
                               const NoiseSchedule& sched,
                               std::optional<Branch> route_override = {}) const {
    if (t > sched.horizon)
      throw ConfigError("denoiser: t=" + std::to_string(t) + " outside [0, " +
                        std::to_string(sched.horizon) + "]");
    if (coords.rank() != 2 || coords.shape()[1] != 3)
      throw ShapeError("denoiser: coords must be M x 3, got " +
                       shape_to_string(coords.shape()));
    const std::size_t m = coords.shape()[0];
    if (type_feats.rank() != 2 || type_feats.shape()[0] != m ||
        type_feats.shape()[1] != cfg_.atom_types)
      throw ShapeError("denoiser: type features must be M x H, got " +
                       shape_to_string(type_feats.shape()));
    {
      double cm[3] = {0, 0, 0};
      for (std::size_t i = 0; i < m; ++i)
        for (int d = 0; d < 3; ++d) cm[d] += static_cast<double>(coords.at(3 * i + d));
      const double cn = std::sqrt(cm[0] * cm[0] + cm[1] * cm[1] + cm[2] * cm[2]) /
                        static_cast<double>(m);
      const double tol = std::is_same_v<Real, float> ? 1e-3 : 1e-4;
      if (cn > tol)
        throw ShapeError("denoiser: coords are not centered (CoM norm " +
                         std::to_string(cn) + ")");
    }

    const Real time_feat =
        static_cast<Real>(static_cast<double>(t) / static_cast<double>(sched.horizon));
    Tensor<Real> tcol = full<Real>({m, 1}, time_feat);
    Tensor<Real> node_in = tape.concat({type_feats, tcol}, 1);
    Tensor<Real> feats =
        tape.add(tape.matmul(node_in, param("embed.w")), param("embed.b"));

    std::vector<std::size_t> recv, send;
    recv.reserve(m * (m - 1));
    send.reserve(m * (m - 1));
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < m; ++j)
        if (i != j) {
          recv.push_back(i);
          send.push_back(j);
        }

    Tensor<Real> x = coords;
    for (std::size_t l = 0; l < cfg_.shared_layers; ++l)
      egnn_layer(tape, "trunk." + std::to_string(l), x, feats, recv, send);

    const Branch branch = route_override ? *route_override : route(t, sched);
    const char* prefix = branch_name(branch);
    const std::size_t branch_layers = cfg_.layers - cfg_.shared_layers;
    for (std::size_t l = 0; l < branch_layers; ++l)
      egnn_layer(tape, std::string(prefix) + "." + std::to_string(l), x, feats,
                 recv, send);

    Tensor<Real> eps = tape.sub(x, coords);
    eps = center_rows(tape, eps);  // explicit zero-CoM projection
    return DenoiserOutput<Real>{eps, feats, branch};
  }

  /// Two-layer MLP head on growth-branch node features: M x H scores.
  Tensor<Real> atom_type_scores(Tape<Real>& tape,
                                const Tensor<Real>& node_feats) const {
    Tensor<Real> h = tape.silu(tape.add(
        tape.matmul(node_feats, param("head.type.w1")), param("head.type.b1")));
    return tape.add(tape.matmul(h, param("head.type.w2")), param("head.type.b2"));
  }

  /// Mean-pool node features, then a two-layer MLP to one scalar.
  Tensor<Real> property_scalar(Tape<Real>& tape,
                               const Tensor<Real>& node_feats) const {
    if (!cfg_.property_head)
      throw ConfigError("denoiser: property head is not enabled");
    Tensor<Real> pooled = tape.mean(node_feats, {0}, true);  // 1 x W
    Tensor<Real> h = tape.silu(tape.add(tape.matmul(pooled, param("head.prop.w1")),
                                        param("head.prop.b1")));
    Tensor<Real> out =
        tape.add(tape.matmul(h, param("head.prop.w2")), param("head.prop.b2"));
    return tape.reshape(out, {});
  }

  /// Count of layer evaluations where the coordinate-update clip engaged;
  /// surfaced in run logs.
  std::size_t clip_events() const { return clip_events_; }
  void reset_clip_events() { clip_events_ = 0; }

 private:
  enum class InitKind { xavier, zero, small_xavier };

  void add_param(const std::string& name, Shape shape, Rng& rng,
                 InitKind kind = InitKind::xavier) {
    Tensor<Real> t(shape);
    if (kind != InitKind::zero) {
      double fan_in = static_cast<double>(shape.size() > 1 ? shape[0] : 1);
      double fan_out = static_cast<double>(shape.back());
      double limit = std::sqrt(6.0 / (fan_in + fan_out));
      if (kind == InitKind::small_xavier) limit *= 1e-3;
      for (std::size_t i = 0; i < t.size(); ++i)
        t.data()[i] = static_cast<Real>(rng.uniform(-limit, limit));
    }
    index_[name] = params_.size();
    params_.emplace_back(name, std::move(t));
  }

  Tensor<Real> center_rows(Tape<Real>& tape, const Tensor<Real>& x) const {
    Tensor<Real> mean = tape.mean(x, {0}, true);  // 1 x 3
    return tape.sub(x, mean);
  }

  void egnn_layer(Tape<Real>& tape, const std::string& prefix, Tensor<Real>& x,
                  Tensor<Real>& feats, const std::vector<std::size_t>& recv,
                  const std::vector<std::size_t>& send) const {
    const std::size_t m = x.shape()[0];

    if (!recv.empty()) {
      Tensor<Real> xi = tape.gather_rows(x, recv);
      Tensor<Real> xj = tape.gather_rows(x, send);
      Tensor<Real> dx = tape.sub(xi, xj);
      Tensor<Real> d2 = tape.sum(tape.square(dx), {1}, true);  // E x 1

      Tensor<Real> fi = tape.gather_rows(feats, recv);
      Tensor<Real> fj = tape.gather_rows(feats, send);
      Tensor<Real> edge_in = tape.concat({fi, fj, d2}, 1);
      Tensor<Real> msg = tape.silu(
          tape.add(tape.matmul(edge_in, param(prefix + ".edge.w1")),
                   param(prefix + ".edge.b1")));
      msg = tape.silu(tape.add(tape.matmul(msg, param(prefix + ".edge.w2")),
                               param(prefix + ".edge.b2")));

      // coordinate update along relative positions, 1/(M-1) scaling
      Tensor<Real> cw = tape.silu(
          tape.add(tape.matmul(msg, param(prefix + ".coord.w1")),
                   param(prefix + ".coord.b1")));
      Tensor<Real> edge_scale = tape.matmul(cw, param(prefix + ".coord.w2"));
      Tensor<Real> contrib = tape.mul(dx, edge_scale);
      Tensor<Real> update = tape.mul_scalar(
          tape.scatter_add_rows(contrib, recv, m),
          static_cast<Real>(1.0 / static_cast<double>(m - 1)));
      update = clip_update_norm(tape, update);
      x = center_rows(tape, tape.add(x, update));

      // feature update from aggregated messages, residual
      Tensor<Real> agg = tape.scatter_add_rows(msg, recv, m);
      Tensor<Real> node_in = tape.concat({feats, agg}, 1);
      Tensor<Real> n1 = tape.silu(
          tape.add(tape.matmul(node_in, param(prefix + ".node.w1")),
                   param(prefix + ".node.b1")));
      Tensor<Real> n2 = tape.add(tape.matmul(n1, param(prefix + ".node.w2")),
                                 param(prefix + ".node.b2"));
      feats = tape.add(feats, n2);
    } else {
      // M = 1: no edges, coordinates fixed, features still update on a zero
      // message aggregate
      Tensor<Real> agg = zeros<Real>({m, cfg_.hidden});
      Tensor<Real> node_in = tape.concat({feats, agg}, 1);
      Tensor<Real> n1 = tape.silu(
          tape.add(tape.matmul(node_in, param(prefix + ".node.w1")),
                   param(prefix + ".node.b1")));
      Tensor<Real> n2 = tape.add(tape.matmul(n1, param(prefix + ".node.w2")),
                                 param(prefix + ".node.b2"));
      feats = tape.add(feats, n2);
    }
  }

  /// Rescales per-atom updates whose norm exceeds the clip threshold; a
  /// rotation-equivariant stabilizer, inactive on well-scaled updates.
  Tensor<Real> clip_update_norm(Tape<Real>& tape,
                                const Tensor<Real>& update) const {
    const auto clip = static_cast<Real>(cfg_.coord_clip);
    const std::size_t m = update.shape()[0];
    Tensor<Real> norm2 = tape.sum(tape.square(update), {1}, true);
    Tensor<Real> norm = tape.sqrt(tape.clamp_min(norm2, Real(1e-24)));
    for (std::size_t i = 0; i < m; ++i)
      if (norm.at(i) > clip) ++clip_events_;
    Tensor<Real> denom = tape.clamp_min(norm, clip);
    Tensor<Real> factor =
        tape.mul_scalar(tape.div(ones<Real>({m, 1}), denom), clip);
    return tape.mul(update, factor);
  }

  DenoiserConfig cfg_;
  NamedTensors<Real> params_;
  std::unordered_map<std::string, std::size_t> index_;
  mutable std::size_t clip_events_ = 0;
};

/// One-hot rows for a type index list.
template <class Real>
Tensor<Real> one_hot_types(const std::vector<int>& types, std::size_t h) {
  Tensor<Real> out({types.size(), h});
  for (std::size_t i = 0; i < types.size(); ++i) {
    if (types[i] < 0 || static_cast<std::size_t>(types[i]) >= h)
      throw DataError("one_hot_types: index out of vocabulary");
    out.data()[i * h + static_cast<std::size_t>(types[i])] = Real(1);
  }
  return out;
}

/// Zero placeholder block used when atom types are unknown to the network.
template <class Real>
Tensor<Real> type_placeholder(std::size_t m, std::size_t h) {
  return zeros<Real>({m, h});
}

template <class Real>
Tensor<Real> coords_tensor(const std::vector<double>& coords) {
  const std::size_t m = coords.size() / 3;
  Tensor<Real> out({m, 3});
  for (std::size_t i = 0; i < coords.size(); ++i)
    out.data()[i] = static_cast<Real>(coords[i]);
  return out;
}

}  // namespace unigem
