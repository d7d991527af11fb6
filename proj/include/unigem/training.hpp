#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "unigem/adam.hpp"
#include "unigem/common.hpp"
#include "unigem/denoiser.hpp"
#include "unigem/molecule.hpp"
#include "unigem/rng.hpp"
#include "unigem/schedule.hpp"
#include "unigem/tensor.hpp"

namespace unigem {

// ---------------------------------------------------------------------------
// Training modes.
//   unigem                Coordinate diffusion, oversampled two-phase time
//                         sampling, multi-branch routing, atom-type and
//                         property losses in the growth phase.
//   joint                 Baseline joint diffusion of coordinates and one-hot
//                         atom types, uniform time sampling, single branch.
//   multitask             Coordinate diffusion with predictive losses at all
//                         timesteps, uniform sampling, single branch.
//   frozen_head           Backbone frozen, heads trained on growth-phase
//                         predictive losses (continued training).
//   unigem_normal_sampling_single_branch / unigem_oversampling_single_branch
//                         Training-strategy ablations.
//   mpp_only / atp_only   Property-only / atom-type-only predictive loss.
// ---------------------------------------------------------------------------

enum class TrainMode {
  unigem,
  joint,
  multitask,
  frozen_head,
  unigem_normal_sampling_single_branch,
  unigem_oversampling_single_branch,
  mpp_only,
  atp_only,
};

inline const char* train_mode_name(TrainMode m) {
  switch (m) {
    case TrainMode::unigem: return "unigem";
    case TrainMode::joint: return "joint";
    case TrainMode::multitask: return "multitask";
    case TrainMode::frozen_head: return "frozen_head";
    case TrainMode::unigem_normal_sampling_single_branch:
      return "unigem_normal_sampling_single_branch";
    case TrainMode::unigem_oversampling_single_branch:
      return "unigem_oversampling_single_branch";
    case TrainMode::mpp_only: return "mpp_only";
    case TrainMode::atp_only: return "atp_only";
  }
  return "?";
}

inline TrainMode parse_train_mode(const std::string& s) {
  for (TrainMode m :
       {TrainMode::unigem, TrainMode::joint, TrainMode::multitask,
        TrainMode::frozen_head, TrainMode::unigem_normal_sampling_single_branch,
        TrainMode::unigem_oversampling_single_branch, TrainMode::mpp_only,
        TrainMode::atp_only})
    if (s == train_mode_name(m)) return m;
  throw ConfigError("unknown training mode '" + s + "'");
}

inline bool mode_oversamples(TrainMode m) {
  switch (m) {
    case TrainMode::unigem:
    case TrainMode::frozen_head:
    case TrainMode::unigem_oversampling_single_branch:
    case TrainMode::mpp_only:
    case TrainMode::atp_only:
      return true;
    default:
      return false;
  }
}

inline bool mode_single_branch(TrainMode m) {
  switch (m) {
    case TrainMode::joint:
    case TrainMode::multitask:
    case TrainMode::unigem_normal_sampling_single_branch:
    case TrainMode::unigem_oversampling_single_branch:
      return true;
    default:
      return false;
  }
}

inline bool mode_has_coordinate_loss(TrainMode m) {
  return m != TrainMode::frozen_head;
}

/// Whether the atom-type loss applies at timestep t. In joint mode the head
/// predicts type noise at every t; in multitask the predictive loss covers
/// all t; elsewhere it is confined to the growth phase.
inline bool mode_has_type_loss(TrainMode m, std::size_t t,
                               const NoiseSchedule& sched) {
  switch (m) {
    case TrainMode::joint:
    case TrainMode::multitask:
      return true;
    case TrainMode::mpp_only:
      return false;
    default:
      return sched.in_growth_phase(t);
  }
}

inline bool mode_has_property_loss(TrainMode m, std::size_t t,
                                   const NoiseSchedule& sched) {
  switch (m) {
    case TrainMode::joint:
    case TrainMode::atp_only:
      return false;
    case TrainMode::multitask:
      return true;
    default:
      return sched.in_growth_phase(t);
  }
}

inline bool mode_needs_property(TrainMode m) {
  return mode_has_property_loss(m, 1, build_schedule(2, 1, 1e-5));
}

struct TrainConfig {
  TrainMode mode = TrainMode::unigem;
  std::size_t batch_size = 64;
  std::size_t epochs = 1;
  double learning_rate = 1e-4;
  double weight_x = 1.0;
  double weight_h = 1.0;
  double weight_c = 1.0;
  std::uint64_t seed = 0;
  std::string property;        // empty = no property labels
  double grad_clip = 0.0;      // 0 disables clipping
  std::size_t checkpoint_every = 0;  // steps; 0 = only at the end

  void validate() const {
    if (batch_size < 1) throw ConfigError("train: batch size must be >= 1");
    if (mode_oversamples(mode) && batch_size % 2 != 0)
      throw ConfigError("train: oversampling modes need an even batch size");
    if (weight_x < 0 || weight_h < 0 || weight_c < 0)
      throw ConfigError("train: loss weights must be nonnegative");
    if (mode_needs_property(mode) && property.empty())
      throw ConfigError(std::string("train: mode ") + train_mode_name(mode) +
                        " requires a property name");
  }
};

// ---------------------------------------------------------------------------
// Loss functions. All reductions are means over elements.
// ---------------------------------------------------------------------------

/// MSE over all 3M entries after projecting both sides to the zero-CoM
/// subspace (a per-atom constant offset therefore does not contribute).
template <class Real>
Tensor<Real> loss_coordinate(Tape<Real>& tape, const Tensor<Real>& eps_hat,
                             const Tensor<Real>& eps) {
  if (eps_hat.shape() != eps.shape())
    throw ShapeError("loss_coordinate: shapes " +
                     shape_to_string(eps_hat.shape()) + " and " +
                     shape_to_string(eps.shape()) + " differ");
  Tensor<Real> a = tape.sub(eps_hat, tape.mean(eps_hat, {0}, true));
  Tensor<Real> b = tape.sub(eps, tape.mean(eps, {0}, true));
  return tape.mean_all(tape.square(tape.sub(a, b)));
}

/// L1 regression of the one-hot rows, mean over all M*H entries.
template <class Real>
Tensor<Real> loss_atomtype(Tape<Real>& tape, const Tensor<Real>& scores,
                           const Tensor<Real>& onehot) {
  if (scores.shape() != onehot.shape())
    throw ShapeError("loss_atomtype: shapes " + shape_to_string(scores.shape()) +
                     " and " + shape_to_string(onehot.shape()) + " differ");
  return tape.mean_all(tape.abs(tape.sub(scores, onehot)));
}

/// Squared error on the normalized property scalar.
template <class Real>
Tensor<Real> loss_property(Tape<Real>& tape, const Tensor<Real>& pred,
                           Real label) {
  return tape.square(tape.add_scalar(pred, -label));
}

// ---------------------------------------------------------------------------
// Two-phase time sampling.
// ---------------------------------------------------------------------------

/// Oversampling modes: first half of the batch draws t uniformly from the
/// nucleation range (t_n, T], second half from the growth range [1, t_n].
/// Normal-sampling modes draw t uniformly from [1, T].
inline std::vector<std::size_t> sample_timesteps(std::size_t batch,
                                                 TrainMode mode,
                                                 const NoiseSchedule& sched,
                                                 Rng& rng) {
  std::vector<std::size_t> out(batch);
  if (mode_oversamples(mode)) {
    if (batch % 2 != 0)
      throw ConfigError("sample_timesteps: odd batch in oversampling mode");
    const std::size_t half = batch / 2;
    for (std::size_t i = 0; i < half; ++i)
      out[i] = static_cast<std::size_t>(rng.uniform_int(
          static_cast<std::int64_t>(sched.nucleation_time) + 1,
          static_cast<std::int64_t>(sched.horizon)));
    for (std::size_t i = half; i < batch; ++i)
      out[i] = static_cast<std::size_t>(
          rng.uniform_int(1, static_cast<std::int64_t>(sched.nucleation_time)));
  } else {
    for (std::size_t i = 0; i < batch; ++i)
      out[i] = static_cast<std::size_t>(
          rng.uniform_int(1, static_cast<std::int64_t>(sched.horizon)));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Trainer.
// ---------------------------------------------------------------------------

struct LossRecord {
  std::size_t step = 0;
  TrainMode mode = TrainMode::unigem;
  std::vector<std::size_t> t_values;
  std::vector<Branch> branches;  // routing trace, aligned with t_values
  double mean_t_low = 0.0;       // mean over growth-phase samples
  double mean_t_high = 0.0;      // mean over nucleation-phase samples
  double loss_x = 0.0;
  double loss_h = 0.0;
  double loss_c = 0.0;
  double total = 0.0;
  double grad_norm = 0.0;
};

inline std::string run_log_header(TrainMode mode) {
  const bool joint = mode == TrainMode::joint;
  return std::string("step,mode,mean_t_low,mean_t_high,") +
         (joint ? "Lx|h,Lh|x" : "Lx,Lh") + ",Lc,total,grad_norm";
}

inline std::string run_log_row(const LossRecord& r) {
  char buf[320];
  std::snprintf(buf, sizeof(buf), "%zu,%s,%.6g,%.6g,%.10g,%.10g,%.10g,%.10g,%.6g",
                r.step, train_mode_name(r.mode), r.mean_t_low, r.mean_t_high,
                r.loss_x, r.loss_h, r.loss_c, r.total, r.grad_norm);
  return buf;
}

/// Training-split view: centered molecules, one-hot targets, and (optional)
/// normalized property labels, indexed against the owning corpus.
struct TrainingData {
  std::vector<Molecule> molecules;       // centered copies, training split
  std::optional<PropertyStats> property_stats;
  std::vector<double> normalized_labels;  // aligned with molecules when present

  static TrainingData from_corpus(const Corpus& corpus,
                                  const std::vector<std::size_t>& indices,
                                  const std::string& property_name) {
    TrainingData d;
    d.molecules.reserve(indices.size());
    for (std::size_t i : indices)
      d.molecules.push_back(center_com(corpus.molecules[i]));
    if (!property_name.empty()) {
      auto [labels, stats] = normalize_property(corpus, property_name, indices);
      d.normalized_labels = std::move(labels);
      d.property_stats = stats;
    }
    return d;
  }
};

template <class Real>
class Trainer {
 public:
  Trainer(TrainConfig cfg, Denoiser<Real>* net, NoiseSchedule sched,
          TrainingData data)
      : cfg_(cfg), net_(net), sched_(std::move(sched)), data_(std::move(data)) {
    cfg_.validate();
    if (data_.molecules.empty()) throw DataError("train: empty training split");
    if (mode_needs_property(cfg_.mode) && !data_.property_stats)
      throw ConfigError("train: mode requires property labels in the data");
    if (mode_needs_property(cfg_.mode) && !net_->config().property_head)
      throw ConfigError("train: property head disabled in denoiser config");
    AdamConfig acfg;
    acfg.lr = cfg_.learning_rate;
    adam_ = Adam<Real>(acfg);
    mark_trainable();
  }

  const TrainConfig& config() const { return cfg_; }
  Denoiser<Real>& net() { return *net_; }
  Adam<Real>& optimizer() { return adam_; }
  std::size_t step_count() const { return step_; }
  void set_step_count(std::size_t s) { step_ = s; }

  std::size_t steps_per_epoch() const {
    return std::max<std::size_t>(1, data_.molecules.size() / cfg_.batch_size);
  }

  /// One optimization step. Deterministic given (config seed, step index).
  LossRecord step() {
    const std::size_t epoch = step_ / steps_per_epoch();
    const std::size_t batch_in_epoch = step_ % steps_per_epoch();
    const auto order = epoch_order(epoch);

    Rng t_rng(derive_seed(cfg_.seed, "timesteps", step_));
    const auto ts = sample_timesteps(cfg_.batch_size, cfg_.mode, sched_, t_rng);

    net_->zero_grads();
    Tape<Real> tape(true);

    Tensor<Real> sum_x = scalar<Real>(0);
    Tensor<Real> sum_h = scalar<Real>(0);
    Tensor<Real> sum_c = scalar<Real>(0);
    LossRecord rec;
    rec.step = step_;
    rec.mode = cfg_.mode;
    rec.t_values = ts;

    for (std::size_t i = 0; i < cfg_.batch_size; ++i) {
      const std::size_t pick =
          order[(batch_in_epoch * cfg_.batch_size + i) % order.size()];
      const Molecule& mol = data_.molecules[pick];
      const std::size_t t = ts[i];
      Rng rng(derive_seed(cfg_.seed, "corrupt",
                          step_ * cfg_.batch_size + i));

      auto fs = forward_sample(mol.coords, sched_, t, rng);
      Tensor<Real> x_t = coords_tensor<Real>(fs.x_t);
      Tensor<Real> eps = coords_tensor<Real>(fs.eps);
      Tensor<Real> onehot =
          one_hot_types<Real>(mol.types, net_->config().atom_types);

      Tensor<Real> type_input;
      Tensor<Real> eps_h;  // joint mode only
      if (cfg_.mode == TrainMode::joint) {
        const std::size_t n = onehot.size();
        Tensor<Real> noise({mol.atom_count(), net_->config().atom_types});
        for (std::size_t k = 0; k < n; ++k)
          noise.data()[k] = static_cast<Real>(rng.normal());
        type_input = Tensor<Real>(onehot.shape());
        for (std::size_t k = 0; k < n; ++k)
          type_input.data()[k] =
              static_cast<Real>(sched_.alpha[t]) * onehot.data()[k] +
              static_cast<Real>(sched_.sigma[t]) * noise.data()[k];
        eps_h = Tensor<Real>(onehot.shape());
        for (std::size_t k = 0; k < n; ++k)
          eps_h.data()[k] = (type_input.data()[k] -
                             static_cast<Real>(sched_.alpha[t]) * onehot.data()[k]) /
                            static_cast<Real>(sched_.sigma[t]);
      } else {
        type_input =
            type_placeholder<Real>(mol.atom_count(), net_->config().atom_types);
      }

      std::optional<Branch> route;
      if (mode_single_branch(cfg_.mode)) route = Branch::growth;
      auto out = net_->forward(tape, x_t, type_input, t, sched_, route);
      rec.branches.push_back(out.branch);

      if (mode_has_coordinate_loss(cfg_.mode))
        sum_x = tape.add(sum_x, loss_coordinate(tape, out.eps_hat, eps));

      if (mode_has_type_loss(cfg_.mode, t, sched_)) {
        Tensor<Real> scores = net_->atom_type_scores(tape, out.node_feats);
        if (cfg_.mode == TrainMode::joint) {
          // type-noise MSE, the L^(h|x) term of the joint decomposition
          sum_h = tape.add(sum_h,
                           tape.mean_all(tape.square(tape.sub(scores, eps_h))));
        } else {
          sum_h = tape.add(sum_h, loss_atomtype(tape, scores, onehot));
        }
      }

      if (mode_has_property_loss(cfg_.mode, t, sched_)) {
        Tensor<Real> pred = net_->property_scalar(tape, out.node_feats);
        const Real label = static_cast<Real>(data_.normalized_labels[pick]);
        sum_c = tape.add(sum_c, loss_property(tape, pred, label));
      }
    }

    const Real inv_b = Real(1) / static_cast<Real>(cfg_.batch_size);
    Tensor<Real> mean_x = tape.mul_scalar(sum_x, inv_b);
    Tensor<Real> mean_h = tape.mul_scalar(sum_h, inv_b);
    Tensor<Real> mean_c = tape.mul_scalar(sum_c, inv_b);
    Tensor<Real> total = tape.add(
        tape.add(tape.mul_scalar(mean_x, static_cast<Real>(cfg_.weight_x)),
                 tape.mul_scalar(mean_h, static_cast<Real>(cfg_.weight_h))),
        tape.mul_scalar(mean_c, static_cast<Real>(cfg_.weight_c)));

    rec.loss_x = static_cast<double>(mean_x.item());
    rec.loss_h = static_cast<double>(mean_h.item());
    rec.loss_c = static_cast<double>(mean_c.item());
    rec.total = static_cast<double>(total.item());
    if (!std::isfinite(rec.total)) {
      std::string offender = !std::isfinite(rec.loss_x)   ? "coordinate"
                             : !std::isfinite(rec.loss_h) ? "atom-type"
                                                          : "property";
      throw NumericError("train step " + std::to_string(step_) +
                         ": non-finite " + offender + " loss");
    }

    tape.backward(total);
    rec.grad_norm = grad_norm();
    if (cfg_.grad_clip > 0.0 && rec.grad_norm > cfg_.grad_clip) {
      const Real scale = static_cast<Real>(cfg_.grad_clip / rec.grad_norm);
      for (auto& [n, p] : net_->params())
        if (p.tracked())
          for (std::size_t i = 0; i < p.size(); ++i) p.grad()[i] *= scale;
    }
    adam_.step(net_->params());

    double lo_sum = 0, hi_sum = 0;
    std::size_t lo_n = 0, hi_n = 0;
    for (std::size_t t : ts) {
      if (sched_.in_growth_phase(t)) {
        lo_sum += static_cast<double>(t);
        ++lo_n;
      } else {
        hi_sum += static_cast<double>(t);
        ++hi_n;
      }
    }
    rec.mean_t_low = lo_n ? lo_sum / static_cast<double>(lo_n) : 0.0;
    rec.mean_t_high = hi_n ? hi_sum / static_cast<double>(hi_n) : 0.0;

    ++step_;
    return rec;
  }

 private:
  void mark_trainable() {
    const bool heads_only = cfg_.mode == TrainMode::frozen_head;
    for (auto& [name, p] : net_->params())
      if (!heads_only || Denoiser<Real>::is_head_param(name)) p.ensure_grad();
  }

  std::vector<std::size_t> epoch_order(std::size_t epoch) const {
    std::vector<std::size_t> order(data_.molecules.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(cfg_.seed, "epoch", epoch));
    for (std::size_t i = order.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(
          rng.uniform_int(0, static_cast<std::int64_t>(i) - 1));
      std::swap(order[i - 1], order[j]);
    }
    return order;
  }

  double grad_norm() const {
    double acc = 0;
    for (const auto& [n, p] : net_->params())
      if (p.tracked())
        for (std::size_t i = 0; i < p.size(); ++i) {
          const double g = static_cast<double>(p.grad()[i]);
          acc += g * g;
        }
    return std::sqrt(acc);
  }

  TrainConfig cfg_;
  Denoiser<Real>* net_;
  NoiseSchedule sched_;
  TrainingData data_;
  Adam<Real> adam_;
  std::size_t step_ = 0;
};

}  // namespace unigem
