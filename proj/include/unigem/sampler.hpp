#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "unigem/common.hpp"
#include "unigem/denoiser.hpp"
#include "unigem/molecule.hpp"
#include "unigem/rng.hpp"
#include "unigem/schedule.hpp"
#include "unigem/tensor.hpp"

namespace unigem {

struct GuidanceSpec {
  double target = 0.0;   // in normalized property units
  double strength = 0.0; // lambda >= 0
};

struct SampleRequest {
  std::size_t count = 1;
  std::size_t fixed_size = 0;  // 0 = draw from the histogram
  std::uint64_t seed = 0;
  std::optional<GuidanceSpec> guidance;
  std::size_t workers = 1;

  void validate() const {
    if (count < 1) throw ConfigError("sample: count must be >= 1");
    if (guidance && guidance->strength < 0)
      throw ConfigError("sample: guidance strength must be >= 0");
  }
};

struct GeneratedMolecule {
  Molecule molecule;                      // coordinates zero-CoM, types set
  std::optional<double> predicted;        // de-normalized property
  std::uint64_t chain_seed = 0;
  std::size_t steps = 0;
  double max_com_norm = 0.0;              // over all chain iterates
};

/// Reverse-chain generation per the trained coordinate denoiser. Parameters
/// are read-only here; chains are independent and parallelizable.
template <class Real>
class Sampler {
 public:
  Sampler(const Denoiser<Real>* net, NoiseSchedule sched,
          std::optional<PropertyStats> stats = {})
      : net_(net), sched_(std::move(sched)), stats_(std::move(stats)) {}

  const NoiseSchedule& schedule() const { return sched_; }

  /// Transition mean x_t / a_{t|t-1} - (s^2_{t|t-1} / (a_{t|t-1} s_t)) eps,
  /// with a caller-supplied noise prediction. The analytic-score diagnostics
  /// drive this same code path with the exact score substituted for the net.
  static std::vector<double> transition_mean(const NoiseSchedule& sched,
                                             const std::vector<double>& x_t,
                                             std::size_t t,
                                             const std::vector<double>& eps) {
    const auto c = conditional_coeffs(sched, t);
    const double mean_a = 1.0 / c.alpha_step;
    const double mean_b =
        (c.sigma_step * c.sigma_step) / (c.alpha_step * sched.sigma[t]);
    std::vector<double> x(x_t.size());
    for (std::size_t i = 0; i < x_t.size(); ++i)
      x[i] = mean_a * x_t[i] - mean_b * eps[i];
    return x;
  }

  /// Adds sigma_tilde-scaled noise; the final step (t = 1) stays
  /// deterministic.
  static void add_transition_noise(const NoiseSchedule& sched,
                                   std::vector<double>& x, std::size_t t,
                                   const std::vector<double>& noise) {
    if (t <= 1) return;
    const auto c = conditional_coeffs(sched, t);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += c.sigma_tilde * noise[i];
  }

  std::vector<double> eps_hat(const std::vector<double>& x_t,
                              std::size_t t) const {
    Tape<Real> tape(false);
    const std::size_t m = x_t.size() / 3;
    auto out = net_->forward(tape, coords_tensor<Real>(x_t),
                             type_placeholder<Real>(m, net_->config().atom_types),
                             t, sched_);
    std::vector<double> e(x_t.size());
    for (std::size_t i = 0; i < e.size(); ++i)
      e[i] = static_cast<double>(out.eps_hat.at(i));
    return e;
  }

  /// One reverse transition x_t -> x_{t-1}. `noise` must be a zero-CoM M x 3
  /// draw; it is ignored at t = 1 (the final step is deterministic).
  std::vector<double> reverse_step(const std::vector<double>& x_t,
                                   std::size_t t,
                                   const std::vector<double>& noise) const {
    return step_impl(x_t, t, noise, nullptr);
  }

  /// Guided reverse transition: the unguided mean minus
  /// lambda * d/dx (phi_c(x_t, t) - target)^2, projected to zero CoM.
  /// lambda = 0 reproduces reverse_step bit for bit under a shared noise.
  std::vector<double> guided_step(const std::vector<double>& x_t, std::size_t t,
                                  const GuidanceSpec& g,
                                  const std::vector<double>& noise) const {
    if (!net_->config().property_head)
      throw ConfigError("guided sampling requires a property head");
    if (g.strength == 0.0) return step_impl(x_t, t, noise, nullptr);
    return step_impl(x_t, t, noise, &g);
  }

  /// Full chain from a supplied prior draw, noise injected via callback
  /// (t, out) so tests can replay or rotate the noise stream.
  std::vector<double> run_chain(
      std::vector<double> x, double* max_com,
      const std::function<std::vector<double>(std::size_t)>& noise_at,
      const GuidanceSpec* guidance = nullptr) const {
    if (max_com) *max_com = com_norm(x);
    for (std::size_t t = sched_.horizon; t >= 1; --t) {
      const std::vector<double> noise =
          t > 1 ? noise_at(t) : std::vector<double>(x.size(), 0.0);
      x = guidance ? step_impl(x, t, noise, guidance)
                   : step_impl(x, t, noise, nullptr);
      if (max_com) *max_com = std::max(*max_com, com_norm(x));
    }
    return x;
  }

  /// Predicted types at t = 0: argmax of the regressed H-vector, ties broken
  /// toward the lowest vocabulary index.
  std::vector<int> assign_types(const std::vector<double>& x0) const {
    Tape<Real> tape(false);
    const std::size_t m = x0.size() / 3;
    const std::size_t h = net_->config().atom_types;
    auto out = net_->forward(tape, coords_tensor<Real>(x0),
                             type_placeholder<Real>(m, h), 0, sched_);
    Tensor<Real> scores = net_->atom_type_scores(tape, out.node_feats);
    std::vector<int> types(m);
    for (std::size_t i = 0; i < m; ++i) {
      std::size_t best = 0;
      for (std::size_t k = 1; k < h; ++k)
        if (scores.at(i * h + k) > scores.at(i * h + best)) best = k;
      types[i] = static_cast<int>(best);
    }
    return types;
  }

  /// phi_c(x0, 0) in original units. Centers the input first.
  double predict_property(const Molecule& mol) const {
    if (!net_->config().property_head)
      throw ConfigError("predict_property: checkpoint has no property head");
    if (!stats_)
      throw ConfigError("predict_property: normalization stats missing");
    const Molecule centered = center_com(mol);
    return stats_->denormalize(predict_property_normalized(centered.coords));
  }

  double predict_property_normalized(const std::vector<double>& x0) const {
    Tape<Real> tape(false);
    const std::size_t m = x0.size() / 3;
    auto out = net_->forward(tape, coords_tensor<Real>(x0),
                             type_placeholder<Real>(m, net_->config().atom_types),
                             0, sched_);
    return static_cast<double>(net_->property_scalar(tape, out.node_feats).item());
  }

  GeneratedMolecule generate_one(std::size_t chain_index,
                                 const SampleRequest& req,
                                 const std::map<std::size_t, double>& histogram) const {
    const std::uint64_t chain_seed = derive_seed(req.seed, "chain", chain_index);
    Rng rng(chain_seed);
    const std::size_t m =
        req.fixed_size > 0 ? req.fixed_size : sample_size(histogram, rng);

    std::vector<double> x = sample_subspace_noise(m, rng);  // subspace prior
    double max_com = 0.0;
    const GuidanceSpec* g =
        (req.guidance && req.guidance->strength > 0.0) ? &*req.guidance : nullptr;
    try {
      x = run_chain(std::move(x), &max_com,
                    [&](std::size_t) { return sample_subspace_noise(m, rng); }, g);
    } catch (const NumericError& e) {
      throw NumericError("chain " + std::to_string(chain_index) + ": " + e.what());
    }

    GeneratedMolecule out;
    out.molecule.coords = x;
    out.molecule.types = assign_types(x);
    if (net_->config().property_head && stats_)
      out.predicted = stats_->denormalize(predict_property_normalized(x));
    out.chain_seed = chain_seed;
    out.steps = sched_.horizon;
    out.max_com_norm = max_com;
    return out;
  }

  std::vector<GeneratedMolecule> generate(
      const SampleRequest& req,
      const std::map<std::size_t, double>& histogram) const {
    req.validate();
    if (req.fixed_size == 0 && histogram.empty())
      throw DataError("sample: no size histogram and no fixed size");
    std::vector<GeneratedMolecule> out(req.count);
    const std::size_t workers = std::max<std::size_t>(1, req.workers);
    if (workers == 1) {
      for (std::size_t i = 0; i < req.count; ++i)
        out[i] = generate_one(i, req, histogram);
      return out;
    }
    std::vector<std::thread> pool;
    std::atomic<std::size_t> next{0};
    std::vector<std::string> errors(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w]() {
        try {
          for (std::size_t i = next.fetch_add(1); i < req.count;
               i = next.fetch_add(1))
            out[i] = generate_one(i, req, histogram);
        } catch (const std::exception& e) {
          errors[w] = e.what();
        }
      });
    }
    for (auto& th : pool) th.join();
    for (const auto& e : errors)
      if (!e.empty()) throw NumericError(e);
    return out;
  }

 private:
  std::vector<double> step_impl(const std::vector<double>& x_t, std::size_t t,
                                const std::vector<double>& noise,
                                const GuidanceSpec* guidance) const {
    if (t < 1 || t > sched_.horizon)
      throw ConfigError("reverse_step: t out of range");
    const std::size_t m = x_t.size() / 3;

    std::vector<double> e = eps_hat(x_t, t);
    for (double v : e)
      if (!std::isfinite(v))
        throw NumericError("reverse_step: non-finite network output at t=" +
                           std::to_string(t));

    std::vector<double> x = transition_mean(sched_, x_t, t, e);

    if (guidance) {
      // gradient of (phi_c(x_t, t) - target)^2 through the network; the
      // property head hangs off the growth branch, so guidance routes it
      // there at every timestep
      Tape<Real> tape(true);
      Tensor<Real> xt = coords_tensor<Real>(x_t);
      xt.ensure_grad();
      auto out = net_->forward(tape, xt,
                               type_placeholder<Real>(m, net_->config().atom_types),
                               t, sched_, Branch::growth);
      Tensor<Real> pred = net_->property_scalar(tape, out.node_feats);
      Tensor<Real> loss = tape.square(
          tape.add_scalar(pred, static_cast<Real>(-guidance->target)));
      tape.backward(loss);
      // project the gradient to the zero-CoM subspace
      double gm[3] = {0, 0, 0};
      for (std::size_t i = 0; i < m; ++i)
        for (int d = 0; d < 3; ++d) gm[d] += static_cast<double>(xt.grad()[3 * i + d]);
      for (int d = 0; d < 3; ++d) gm[d] /= static_cast<double>(m);
      for (std::size_t i = 0; i < m; ++i)
        for (int d = 0; d < 3; ++d)
          x[3 * i + d] -= guidance->strength *
                          (static_cast<double>(xt.grad()[3 * i + d]) - gm[d]);
    }

    add_transition_noise(sched_, x, t, noise);
    return x;
  }

  const Denoiser<Real>* net_;
  NoiseSchedule sched_;
  std::optional<PropertyStats> stats_;
};

}  // namespace unigem
