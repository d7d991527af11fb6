#pragma once

#include <array>
#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "unigem/common.hpp"
#include "unigem/denoiser.hpp"
#include "unigem/molecule.hpp"
#include "unigem/rng.hpp"
#include "unigem/sampler.hpp"
#include "unigem/schedule.hpp"
#include "unigem/training.hpp"

namespace unigem {

// ---------------------------------------------------------------------------
// Tractable toy distributions with closed-form marginals under the forward
// process; everything the theory diagnostics need can be evaluated exactly
// (or by quadrature) against them.
// ---------------------------------------------------------------------------

/// Isotropic N(0, s2 I) in `dim` dimensions.
struct ToyGaussian {
  double s2 = 1.0;
  std::size_t dim = 1;
};

/// 1-D two-component mixture w N(mu1, s2) + (1-w) N(mu2, s2).
struct ToyMixture {
  double mu1 = -2.0;
  double mu2 = 2.0;
  double s2 = 0.25;
  double w = 0.5;
};

/// E[x0 | x_t] for the isotropic Gaussian: alpha s^2 x_t / (alpha^2 s^2 + sigma^2).
inline double gaussian_posterior_mean(const ToyGaussian& toy, double alpha,
                                      double sigma, double x_t) {
  return alpha * toy.s2 * x_t / (alpha * alpha * toy.s2 + sigma * sigma);
}

/// d/dx log q(x_t) for the Gaussian toy.
inline double gaussian_score(const ToyGaussian& toy, double alpha, double sigma,
                             double x_t) {
  return -x_t / (alpha * alpha * toy.s2 + sigma * sigma);
}

inline double mixture_density(const ToyMixture& toy, double alpha, double sigma,
                              double x_t) {
  const double var = alpha * alpha * toy.s2 + sigma * sigma;
  auto comp = [&](double mu) {
    const double d = x_t - alpha * mu;
    return std::exp(-0.5 * d * d / var) / std::sqrt(2.0 * M_PI * var);
  };
  return toy.w * comp(toy.mu1) + (1.0 - toy.w) * comp(toy.mu2);
}

inline double mixture_score(const ToyMixture& toy, double alpha, double sigma,
                            double x_t) {
  const double var = alpha * alpha * toy.s2 + sigma * sigma;
  auto comp = [&](double mu) {
    const double d = x_t - alpha * mu;
    return std::exp(-0.5 * d * d / var) / std::sqrt(2.0 * M_PI * var);
  };
  const double p1 = toy.w * comp(toy.mu1);
  const double p2 = (1.0 - toy.w) * comp(toy.mu2);
  const double dp1 = -p1 * (x_t - alpha * toy.mu1) / var;
  const double dp2 = -p2 * (x_t - alpha * toy.mu2) / var;
  return (dp1 + dp2) / (p1 + p2);
}

// ---------------------------------------------------------------------------
// Composite Gauss-Legendre quadrature (16-point panels).
// ---------------------------------------------------------------------------

namespace detail_gl {
inline constexpr std::array<double, 8> kNodes = {
    0.0950125098376374, 0.2816035507792589, 0.4580167776572274,
    0.6178762444026438, 0.7554044083550030, 0.8656312023878318,
    0.9445750230732326, 0.9894009349916499};
inline constexpr std::array<double, 8> kWeights = {
    0.1894506104550685, 0.1826034150449236, 0.1691565193950025,
    0.1495959888165767, 0.1246289712555339, 0.0951585116824928,
    0.0622535239386479, 0.0271524594117541};
}  // namespace detail_gl

/// Integrates f over [lo, hi] with `panels` 16-point Gauss-Legendre panels.
template <class F>
double gauss_legendre(F f, double lo, double hi, std::size_t panels) {
  const double width = (hi - lo) / static_cast<double>(panels);
  double total = 0.0;
  for (std::size_t p = 0; p < panels; ++p) {
    const double a = lo + width * static_cast<double>(p);
    const double mid = a + 0.5 * width, half = 0.5 * width;
    for (std::size_t k = 0; k < 8; ++k) {
      total += detail_gl::kWeights[k] * half *
               (f(mid + half * detail_gl::kNodes[k]) +
                f(mid - half * detail_gl::kNodes[k]));
    }
  }
  return total;
}

// ---------------------------------------------------------------------------
// Tweedie posterior-mean identity: E[x0|x_t] = (x_t + sigma^2 d/dx log q) / alpha.
// Left side by direct posterior integration, right side from the score.
// ---------------------------------------------------------------------------

/// Max deviation over an x_t grid, Gaussian case (both sides closed form).
inline double tweedie_check_gaussian(const ToyGaussian& toy,
                                     const NoiseSchedule& sched, std::size_t t,
                                     std::size_t n_grid) {
  const double alpha = sched.alpha[t], sigma = sched.sigma[t];
  const double spread = 3.0 * std::sqrt(alpha * alpha * toy.s2 + sigma * sigma);
  double max_dev = 0.0;
  for (std::size_t i = 0; i < n_grid; ++i) {
    const double x_t =
        -spread + 2.0 * spread * static_cast<double>(i) /
                      static_cast<double>(n_grid - 1);
    const double direct = gaussian_posterior_mean(toy, alpha, sigma, x_t);
    const double tweedie =
        (x_t + sigma * sigma * gaussian_score(toy, alpha, sigma, x_t)) / alpha;
    max_dev = std::max(max_dev, std::abs(direct - tweedie));
  }
  return max_dev;
}

/// Max deviation for the mixture: the posterior-mean side is evaluated by a
/// quadrature oracle with `total_nodes` Gauss-Legendre nodes over +-10 std.
inline double tweedie_check_mixture(const ToyMixture& toy,
                                    const NoiseSchedule& sched, std::size_t t,
                                    std::size_t n_grid,
                                    std::size_t total_nodes = 10000) {
  const double alpha = sched.alpha[t], sigma = sched.sigma[t];
  const double s = std::sqrt(toy.s2);
  const double lo = std::min(toy.mu1, toy.mu2) - 10.0 * s;
  const double hi = std::max(toy.mu1, toy.mu2) + 10.0 * s;
  const std::size_t panels = std::max<std::size_t>(1, total_nodes / 16);

  auto posterior_mean_quadrature = [&](double x_t) {
    auto q0 = [&](double x0) {
      auto comp = [&](double mu) {
        const double d = x0 - mu;
        return std::exp(-0.5 * d * d / toy.s2) / std::sqrt(2.0 * M_PI * toy.s2);
      };
      return toy.w * comp(toy.mu1) + (1.0 - toy.w) * comp(toy.mu2);
    };
    auto likelihood = [&](double x0) {
      const double d = x_t - alpha * x0;
      return std::exp(-0.5 * d * d / (sigma * sigma)) /
             std::sqrt(2.0 * M_PI * sigma * sigma);
    };
    const double numer = gauss_legendre(
        [&](double x0) { return x0 * likelihood(x0) * q0(x0); }, lo, hi, panels);
    const double denom = gauss_legendre(
        [&](double x0) { return likelihood(x0) * q0(x0); }, lo, hi, panels);
    return numer / denom;
  };

  const double marg_std = std::sqrt(alpha * alpha * toy.s2 + sigma * sigma);
  const double glo = alpha * toy.mu1 - 2.5 * marg_std;
  const double ghi = alpha * toy.mu2 + 2.5 * marg_std;
  double max_dev = 0.0;
  for (std::size_t i = 0; i < n_grid; ++i) {
    const double x_t = glo + (ghi - glo) * static_cast<double>(i) /
                                 static_cast<double>(n_grid - 1);
    const double direct = posterior_mean_quadrature(x_t);
    const double tweedie =
        (x_t + sigma * sigma * mixture_score(toy, alpha, sigma, x_t)) / alpha;
    max_dev = std::max(max_dev, std::abs(direct - tweedie));
  }
  return max_dev;
}

// ---------------------------------------------------------------------------
// Mutual-information lower bound on the Gaussian toy.
//   I(x0; x_t) = (d/2) ln(1 + alpha^2 s^2 / sigma^2)          (closed form)
//   KL term    = E || E_q[x0|x_t] - x0_hat(x_t) ||^2 / (2 s_post^2)
// with s_post^2 the analytic posterior variance (the equal-variance Gaussian
// KL). The perfect denoiser gives KL = 0 and bound = I.
// ---------------------------------------------------------------------------

struct MiReport {
  double mutual_information = 0.0;
  double kl_estimate = 0.0;
  double lower_bound = 0.0;
};

inline double gaussian_mutual_information(const ToyGaussian& toy,
                                          const NoiseSchedule& sched,
                                          std::size_t t) {
  const double a2 = sched.alpha[t] * sched.alpha[t];
  const double s2 = sched.sigma[t] * sched.sigma[t];
  return 0.5 * static_cast<double>(toy.dim) * std::log1p(a2 * toy.s2 / s2);
}

/// `x0_hat` maps a flat x_t vector (dim entries) to an x0 estimate; pass
/// nullptr for the perfect (analytic posterior mean) denoiser.
inline MiReport mi_lower_bound(
    const ToyGaussian& toy, const NoiseSchedule& sched, std::size_t t,
    const std::function<std::vector<double>(const std::vector<double>&)>& x0_hat,
    std::size_t n_mc, std::uint64_t seed) {
  if (t < 1 || t > sched.horizon)
    throw ConfigError("mi_lower_bound: t out of range");
  MiReport rep;
  rep.mutual_information = gaussian_mutual_information(toy, sched, t);
  const double alpha = sched.alpha[t], sigma = sched.sigma[t];
  const double post_var =
      sigma * sigma * toy.s2 / (alpha * alpha * toy.s2 + sigma * sigma);
  if (!x0_hat) {
    rep.kl_estimate = 0.0;  // exact: the estimator IS the posterior mean
  } else {
    Rng rng(derive_seed(seed, "mi-mc", t));
    double acc = 0.0;
    const double s = std::sqrt(toy.s2);
    for (std::size_t k = 0; k < n_mc; ++k) {
      std::vector<double> x_t(toy.dim);
      for (auto& v : x_t) v = alpha * s * rng.normal() + sigma * rng.normal();
      const auto est = x0_hat(x_t);
      double d2 = 0.0;
      for (std::size_t i = 0; i < toy.dim; ++i) {
        const double exact = gaussian_posterior_mean(toy, alpha, sigma, x_t[i]);
        d2 += (exact - est[i]) * (exact - est[i]);
      }
      acc += d2;
    }
    rep.kl_estimate = acc / static_cast<double>(n_mc) / (2.0 * post_var);
  }
  rep.lower_bound = rep.mutual_information - rep.kl_estimate;
  return rep;
}

// ---------------------------------------------------------------------------
// Analytic-score sampler validation: run the reverse chain with the exact
// score substituted for the network and compare terminal moments against the
// data distribution. Exercises the same transition code the sampler uses.
// ---------------------------------------------------------------------------

struct MomentReport {
  double mean = 0.0;
  double variance = 0.0;
  double mean_se = 0.0;  // standard error of the mean estimate
  std::size_t samples = 0;
  double expected_variance = 0.0;  // exact discrete-chain value
};

/// Exact terminal variance of the discrete chain driven by the analytic
/// score: a linear Gaussian recursion, independent of any sampling.
inline double analytic_chain_terminal_variance(const ToyGaussian& toy,
                                               const NoiseSchedule& sched) {
  double v = 1.0;  // prior N(0, 1)
  for (std::size_t t = sched.horizon; t >= 1; --t) {
    const auto c = conditional_coeffs(sched, t);
    const double marg =
        sched.alpha[t] * sched.alpha[t] * toy.s2 + sched.sigma[t] * sched.sigma[t];
    // eps_hat = -sigma * score = sigma x / marg  =>  linear mean coefficient
    const double coef = 1.0 / c.alpha_step -
                        (c.sigma_step * c.sigma_step) /
                            (c.alpha_step * marg);
    const double noise_var = t > 1 ? c.sigma_tilde * c.sigma_tilde : 0.0;
    v = coef * coef * v + noise_var;
  }
  return v;
}

inline MomentReport analytic_score_sampling(const ToyGaussian& toy,
                                            const NoiseSchedule& sched,
                                            std::size_t n_chains,
                                            std::uint64_t seed) {
  MomentReport rep;
  rep.expected_variance = analytic_chain_terminal_variance(toy, sched);
  const std::size_t d = toy.dim;
  double sum = 0.0, sum2 = 0.0;
  Rng rng(derive_seed(seed, "analytic-chains"));
  std::vector<double> x(d), eps(d), noise(d);
  for (std::size_t chain = 0; chain < n_chains; ++chain) {
    for (auto& v : x) v = rng.normal();  // prior N(0, I)
    for (std::size_t t = sched.horizon; t >= 1; --t) {
      const double marg = sched.alpha[t] * sched.alpha[t] * toy.s2 +
                          sched.sigma[t] * sched.sigma[t];
      for (std::size_t i = 0; i < d; ++i)
        eps[i] = sched.sigma[t] * x[i] / marg;  // -sigma * score
      x = Sampler<double>::transition_mean(sched, x, t, eps);
      if (t > 1) {
        for (auto& v : noise) v = rng.normal();
        Sampler<double>::add_transition_noise(sched, x, t, noise);
      }
    }
    for (std::size_t i = 0; i < d; ++i) {
      sum += x[i];
      sum2 += x[i] * x[i];
    }
  }
  rep.samples = n_chains * d;
  rep.mean = sum / static_cast<double>(rep.samples);
  rep.variance = sum2 / static_cast<double>(rep.samples) - rep.mean * rep.mean;
  rep.mean_se = std::sqrt(rep.variance / static_cast<double>(rep.samples));
  return rep;
}

// ---------------------------------------------------------------------------
// Per-timestep loss profiles and the measurable error-term decomposition.
// ---------------------------------------------------------------------------

struct LossProfile {
  TrainMode mode = TrainMode::unigem;
  std::vector<double> coord;      // mean loss at t = 1..T (index t-1)
  std::vector<double> coord_var;  // per-sample variance at each t
  std::vector<double> type;       // L1 (unigem lineage) or noise MSE (joint)
  std::vector<double> type_var;
  std::size_t n_per_t = 0;
};

template <class Real>
LossProfile loss_profile(const Denoiser<Real>& net, const NoiseSchedule& sched,
                         const TrainingData& data, TrainMode mode,
                         std::size_t n_per_t, std::uint64_t seed) {
  LossProfile prof;
  prof.mode = mode;
  prof.n_per_t = n_per_t;
  const std::size_t T = sched.horizon;
  prof.coord.assign(T, 0.0);
  prof.coord_var.assign(T, 0.0);
  prof.type.assign(T, 0.0);
  prof.type_var.assign(T, 0.0);
  const std::size_t h = net.config().atom_types;

  for (std::size_t t = 1; t <= T; ++t) {
    double sx = 0, sx2 = 0, sh = 0, sh2 = 0;
    for (std::size_t k = 0; k < n_per_t; ++k) {
      Rng rng(derive_seed(seed, "profile", t * 1000003ULL + k));
      const Molecule& mol =
          data.molecules[static_cast<std::size_t>(rng.uniform_int(
              0, static_cast<std::int64_t>(data.molecules.size()) - 1))];
      auto fs = forward_sample(mol.coords, sched, t, rng);
      Tensor<Real> x_t = coords_tensor<Real>(fs.x_t);
      Tensor<Real> eps = coords_tensor<Real>(fs.eps);
      Tensor<Real> onehot = one_hot_types<Real>(mol.types, h);

      Tensor<Real> type_input;
      Tensor<Real> eps_h;
      if (mode == TrainMode::joint) {
        type_input = Tensor<Real>(onehot.shape());
        eps_h = Tensor<Real>(onehot.shape());
        for (std::size_t i = 0; i < onehot.size(); ++i) {
          const double nz = rng.normal();
          type_input.data()[i] =
              static_cast<Real>(sched.alpha[t]) * onehot.data()[i] +
              static_cast<Real>(sched.sigma[t] * nz);
          eps_h.data()[i] = static_cast<Real>(nz);
        }
      } else {
        type_input = type_placeholder<Real>(mol.atom_count(), h);
      }

      Tape<Real> tape(false);
      std::optional<Branch> route;
      if (mode_single_branch(mode)) route = Branch::growth;
      auto out = net.forward(tape, x_t, type_input, t, sched, route);
      const double lx =
          static_cast<double>(loss_coordinate(tape, out.eps_hat, eps).item());
      sx += lx;
      sx2 += lx * lx;

      double lh = 0.0;
      Tensor<Real> scores = net.atom_type_scores(tape, out.node_feats);
      if (mode == TrainMode::joint)
        lh = static_cast<double>(
            tape.mean_all(tape.square(tape.sub(scores, eps_h))).item());
      else
        lh = static_cast<double>(loss_atomtype(tape, scores, onehot).item());
      sh += lh;
      sh2 += lh * lh;
    }
    const double n = static_cast<double>(n_per_t);
    prof.coord[t - 1] = sx / n;
    prof.coord_var[t - 1] = std::max(0.0, sx2 / n - (sx / n) * (sx / n));
    prof.type[t - 1] = sh / n;
    prof.type_var[t - 1] = std::max(0.0, sh2 / n - (sh / n) * (sh / n));
  }
  return prof;
}

/// Mean atom-type prediction error on clean coordinates (t = 0): the
/// growth-phase head against the true one-hot rows, L1, mean over entries.
template <class Real>
std::pair<double, double> type_error_at_zero(const Denoiser<Real>& net,
                                             const NoiseSchedule& sched,
                                             const TrainingData& data) {
  double s = 0, s2 = 0;
  for (const auto& mol : data.molecules) {
    Tape<Real> tape(false);
    auto out = net.forward(tape, coords_tensor<Real>(mol.coords),
                           type_placeholder<Real>(mol.atom_count(),
                                                  net.config().atom_types),
                           0, sched);
    Tensor<Real> scores = net.atom_type_scores(tape, out.node_feats);
    Tensor<Real> onehot =
        one_hot_types<Real>(mol.types, net.config().atom_types);
    const double v =
        static_cast<double>(loss_atomtype(tape, scores, onehot).item());
    s += v;
    s2 += v * v;
  }
  const double n = static_cast<double>(data.molecules.size());
  const double mean = s / n;
  const double var = std::max(0.0, s2 / n - mean * mean);
  return {mean, std::sqrt(var / n)};
}

/// The measurable terms of the generation-error bounds, for the coordinate
/// diffusion model and the joint baseline, plus the dimensionality and
/// second-moment quantities whose orderings hold on any dataset.
struct ErrorDecomposition {
  // coordinate score estimation terms sqrt(l * sum_t L_t), with MC s.e.
  double coord_term_unigem = 0.0, coord_se_unigem = 0.0;
  double coord_term_joint = 0.0, coord_se_joint = 0.0;
  // atom-type terms: (1/2) E L^h(x0) for the predictive route,
  // sqrt(l * sum_t L^{h|x}_t) for the joint route
  double type_term_unigem = 0.0, type_se_unigem = 0.0;
  double type_term_joint = 0.0, type_se_joint = 0.0;
  double l_step = 0.0;  // T~/T with T~ = -ln(alpha_T); reported, not asserted
  double m2_x = 0.0, m2_z = 0.0;
  double d_x = 0.0, d_z = 0.0;
};

inline std::pair<double, double> sqrt_sum_term(const std::vector<double>& means,
                                               const std::vector<double>& vars,
                                               std::size_t n_per_t, double l) {
  double sum = 0.0, var_sum = 0.0;
  for (std::size_t i = 0; i < means.size(); ++i) {
    sum += means[i];
    var_sum += vars[i] / static_cast<double>(n_per_t);
  }
  const double term = std::sqrt(std::max(0.0, l * sum));
  const double se =
      term > 0 ? l * std::sqrt(var_sum) / (2.0 * term) : std::sqrt(l * var_sum);
  return {term, se};
}

template <class Real>
ErrorDecomposition error_decomposition(const Denoiser<Real>& unigem_net,
                                       const Denoiser<Real>& joint_net,
                                       const NoiseSchedule& sched,
                                       const TrainingData& data,
                                       std::size_t n_per_t,
                                       std::uint64_t seed) {
  ErrorDecomposition dec;
  dec.l_step = -std::log(sched.alpha[sched.horizon]) /
               static_cast<double>(sched.horizon);

  const auto prof_u =
      loss_profile(unigem_net, sched, data, TrainMode::unigem, n_per_t, seed);
  const auto prof_j =
      loss_profile(joint_net, sched, data, TrainMode::joint, n_per_t, seed);

  std::tie(dec.coord_term_unigem, dec.coord_se_unigem) =
      sqrt_sum_term(prof_u.coord, prof_u.coord_var, n_per_t, dec.l_step);
  std::tie(dec.coord_term_joint, dec.coord_se_joint) =
      sqrt_sum_term(prof_j.coord, prof_j.coord_var, n_per_t, dec.l_step);
  std::tie(dec.type_term_joint, dec.type_se_joint) =
      sqrt_sum_term(prof_j.type, prof_j.type_var, n_per_t, dec.l_step);

  auto [t0, t0_se] = type_error_at_zero(unigem_net, sched, data);
  dec.type_term_unigem = 0.5 * t0;
  dec.type_se_unigem = 0.5 * t0_se;

  double m2x = 0.0, mbar = 0.0;
  for (const auto& mol : data.molecules) {
    for (double v : mol.coords) m2x += v * v;
    mbar += static_cast<double>(mol.atom_count());
  }
  const double n = static_cast<double>(data.molecules.size());
  dec.m2_x = m2x / n;
  mbar /= n;
  dec.m2_z = dec.m2_x + mbar;  // one-hot rows contribute ||h||^2 = M
  dec.d_x = 3.0 * mbar;
  dec.d_z = (3.0 + static_cast<double>(unigem_net.config().atom_types)) * mbar;
  return dec;
}

}  // namespace unigem
