#pragma once

#include <cmath>
#include <cstdio>
#include <ostream>
#include <vector>

#include "unigem/common.hpp"
#include "unigem/rng.hpp"

namespace unigem {

/// Variance-preserving noise schedule: alpha decays polynomially from 1-s to
/// s over [0, T], alpha^2 + sigma^2 = 1 at every step, strict monotonicity
/// enforced by a cumulative-minimum pass on alpha^2. The growth phase is
/// t in [1, nucleation_time], inclusive.
struct NoiseSchedule {
  std::size_t horizon = 1000;         // T
  std::size_t nucleation_time = 10;   // t_n
  double precision = 1e-5;            // s
  std::vector<double> alpha;          // t = 0..T
  std::vector<double> sigma;          // t = 0..T

  bool in_growth_phase(std::size_t t) const { return t <= nucleation_time; }
};

inline NoiseSchedule build_schedule(std::size_t horizon = 1000,
                                    std::size_t nucleation_time = 10,
                                    double precision = 1e-5) {
  if (horizon < 2) throw ConfigError("schedule: horizon must be >= 2");
  if (nucleation_time < 1 || nucleation_time >= horizon)
    throw ConfigError("schedule: need 1 <= nucleation_time < horizon");
  if (precision <= 0.0 || precision >= 0.5)
    throw ConfigError("schedule: precision must lie in (0, 0.5)");

  NoiseSchedule s;
  s.horizon = horizon;
  s.nucleation_time = nucleation_time;
  s.precision = precision;
  s.alpha.resize(horizon + 1);
  s.sigma.resize(horizon + 1);
  double prev_alpha2 = 2.0;
  for (std::size_t t = 0; t <= horizon; ++t) {
    const double frac = static_cast<double>(t) / static_cast<double>(horizon);
    const double decay = 1.0 - frac * frac;
    double a = (1.0 - 2.0 * precision) * decay + precision;
    double a2 = a * a;
    if (a2 > prev_alpha2) a2 = prev_alpha2;  // monotonicity pass
    prev_alpha2 = a2;
    s.alpha[t] = std::sqrt(a2);
    s.sigma[t] = std::sqrt(1.0 - a2);
  }
  return s;
}

/// Reverse-transition coefficients for step t -> t-1.
struct ConditionalCoeffs {
  double alpha_step;   // alpha_{t|t-1}
  double sigma_step;   // sigma_{t|t-1}
  double sigma_tilde;  // posterior std sigma_{t|t-1} sigma_{t-1} / sigma_t
};

inline ConditionalCoeffs conditional_coeffs(const NoiseSchedule& s,
                                            std::size_t t) {
  if (t < 1 || t > s.horizon)
    throw ConfigError("conditional_coeffs: t=" + std::to_string(t) +
                      " outside [1, " + std::to_string(s.horizon) + "]");
  ConditionalCoeffs c;
  c.alpha_step = s.alpha[t] / s.alpha[t - 1];
  const double s2 =
      s.sigma[t] * s.sigma[t] - c.alpha_step * c.alpha_step * s.sigma[t - 1] * s.sigma[t - 1];
  c.sigma_step = std::sqrt(std::max(0.0, s2));
  c.sigma_tilde = c.sigma_step * s.sigma[t - 1] / s.sigma[t];
  return c;
}

/// Standard normal draw in the zero center-of-mass subspace: sample M x 3
/// normals, subtract per-column means. M = 1 collapses to the zero vector.
inline std::vector<double> sample_subspace_noise(std::size_t m, Rng& rng) {
  std::vector<double> eps(3 * m);
  for (auto& v : eps) v = rng.normal();
  double mean[3] = {0, 0, 0};
  for (std::size_t i = 0; i < m; ++i)
    for (int d = 0; d < 3; ++d) mean[d] += eps[3 * i + d];
  for (int d = 0; d < 3; ++d) mean[d] /= static_cast<double>(m);
  for (std::size_t i = 0; i < m; ++i)
    for (int d = 0; d < 3; ++d) eps[3 * i + d] -= mean[d];
  return eps;
}

inline double com_norm(const std::vector<double>& coords) {
  const std::size_t m = coords.size() / 3;
  double mean[3] = {0, 0, 0};
  for (std::size_t i = 0; i < m; ++i)
    for (int d = 0; d < 3; ++d) mean[d] += coords[3 * i + d];
  double n2 = 0;
  for (int d = 0; d < 3; ++d) {
    mean[d] /= static_cast<double>(m);
    n2 += mean[d] * mean[d];
  }
  return std::sqrt(n2);
}

struct ForwardSample {
  std::vector<double> x_t;
  std::vector<double> eps;
};

/// q(x_t | x_0): x_t = alpha_t x_0 + sigma_t eps with subspace noise.
/// The returned eps satisfies (x_t - alpha_t x_0) / sigma_t bitwise.
inline ForwardSample forward_sample(const std::vector<double>& x0,
                                    const NoiseSchedule& s, std::size_t t,
                                    Rng& rng) {
  if (t > s.horizon) throw ConfigError("forward_sample: t out of range");
  if (com_norm(x0) > 1e-6)
    throw ShapeError("forward_sample: x0 is not centered (CoM norm " +
                     std::to_string(com_norm(x0)) + ")");
  ForwardSample out;
  out.eps = sample_subspace_noise(x0.size() / 3, rng);
  out.x_t.resize(x0.size());
  for (std::size_t i = 0; i < x0.size(); ++i)
    out.x_t[i] = s.alpha[t] * x0[i] + s.sigma[t] * out.eps[i];
  // re-derive eps from the identity so the returned pair matches bitwise
  for (std::size_t i = 0; i < x0.size(); ++i)
    out.eps[i] = (out.x_t[i] - s.alpha[t] * x0[i]) / s.sigma[t];
  return out;
}

/// CSV dump `t,alpha,sigma` for diffing schedules across implementations.
inline void dump_schedule_csv(std::ostream& os, const NoiseSchedule& s) {
  os << "t,alpha,sigma\n";
  char buf[96];
  for (std::size_t t = 0; t <= s.horizon; ++t) {
    std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g\n", t, s.alpha[t],
                  s.sigma[t]);
    os << buf;
  }
}

}  // namespace unigem
