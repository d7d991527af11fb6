#include "unigem/schedule.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

using namespace unigem;

TEST(Schedule, EndpointsAndIdentities) {
  const double s = 1e-5;
  NoiseSchedule sch = build_schedule(1000, 10, s);
  EXPECT_NEAR(sch.alpha[0], 1.0 - s, 1e-15);
  EXPECT_NEAR(sch.sigma[0], std::sqrt(1.0 - (1.0 - s) * (1.0 - s)), 1e-12);
  EXPECT_NEAR(sch.sigma[0], 4.47e-3, 1e-4);
  EXPECT_NEAR(sch.alpha[1000], s, 1e-15);
  for (std::size_t t = 0; t <= 1000; ++t) {
    EXPECT_NEAR(sch.alpha[t] * sch.alpha[t] + sch.sigma[t] * sch.sigma[t], 1.0,
                1e-12);
    if (t > 0) EXPECT_LT(sch.alpha[t], sch.alpha[t - 1]);
  }
}

TEST(Schedule, ParameterDomainErrors) {
  EXPECT_THROW(build_schedule(1, 0, 1e-5), ConfigError);
  EXPECT_THROW(build_schedule(100, 0, 1e-5), ConfigError);
  EXPECT_THROW(build_schedule(100, 100, 1e-5), ConfigError);
  EXPECT_THROW(build_schedule(100, 10, 0.6), ConfigError);
  EXPECT_THROW(build_schedule(100, 10, 0.0), ConfigError);
}

TEST(Schedule, ConditionalCoefficientIdentity) {
  NoiseSchedule sch = build_schedule(1000, 10, 1e-5);
  for (std::size_t t = 1; t <= 1000; ++t) {
    const auto c = conditional_coeffs(sch, t);
    EXPECT_TRUE(std::isfinite(c.alpha_step));
    EXPECT_GE(c.sigma_step, 0.0);
    EXPECT_GE(c.sigma_tilde, 0.0);
    const double lhs = c.alpha_step * c.alpha_step * sch.sigma[t - 1] * sch.sigma[t - 1] +
                       c.sigma_step * c.sigma_step;
    EXPECT_NEAR(lhs, sch.sigma[t] * sch.sigma[t], 1e-12);
  }
  EXPECT_THROW(conditional_coeffs(sch, 0), ConfigError);
  EXPECT_THROW(conditional_coeffs(sch, 1001), ConfigError);
}

TEST(Schedule, ConditionalCoeffsMatchDirectEvaluation) {
  NoiseSchedule sch = build_schedule(1000, 10, 1e-5);
  const auto c = conditional_coeffs(sch, 1);
  // independent scalar evaluation of the defining formulas
  const double a0 = sch.alpha[0], a1 = sch.alpha[1];
  const double s0 = sch.sigma[0], s1 = sch.sigma[1];
  const double a_step = a1 / a0;
  const double s_step = std::sqrt(s1 * s1 - a_step * a_step * s0 * s0);
  const double s_tilde = s_step * s0 / s1;
  EXPECT_DOUBLE_EQ(c.alpha_step, a_step);
  EXPECT_NEAR(c.sigma_step, s_step, 1e-15);
  EXPECT_NEAR(c.sigma_tilde, s_tilde, 1e-15);
}

TEST(Schedule, SubspaceNoiseZeroCom) {
  Rng rng(derive_seed(1, "subspace"));
  for (std::size_t m : {2u, 5u, 9u}) {
    auto eps = sample_subspace_noise(m, rng);
    EXPECT_LT(com_norm(eps), 1e-12);
  }
  auto single = sample_subspace_noise(1, rng);
  for (double v : single) EXPECT_DOUBLE_EQ(v, 0.0);
}

TEST(Schedule, SubspaceNoiseCovarianceMatchesProjection) {
  const std::size_t m = 5;
  const int n = 100000;
  Rng rng(derive_seed(2, "subspace-cov"));
  // covariance over the x-axis components
  std::vector<double> cov(m * m, 0.0);
  for (int k = 0; k < n; ++k) {
    auto eps = sample_subspace_noise(m, rng);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < m; ++j)
        cov[i * m + j] += eps[3 * i] * eps[3 * j];
  }
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      const double expected = (i == j ? 1.0 : 0.0) - 1.0 / static_cast<double>(m);
      EXPECT_NEAR(cov[i * m + j] / n, expected, 0.02);
    }
}

TEST(Schedule, ForwardSampleIdentityAndCom) {
  NoiseSchedule sch = build_schedule(1000, 10, 1e-5);
  Rng rng(derive_seed(3, "forward"));
  std::vector<double> x0 = sample_subspace_noise(6, rng);
  for (auto& v : x0) v *= 1.7;

  Rng noise_rng(derive_seed(3, "forward-noise"));
  auto fs = forward_sample(x0, sch, 500, noise_rng);
  for (std::size_t i = 0; i < x0.size(); ++i) {
    const double rederived = (fs.x_t[i] - sch.alpha[500] * x0[i]) / sch.sigma[500];
    EXPECT_EQ(rederived, fs.eps[i]);  // bitwise
  }
  EXPECT_LT(com_norm(fs.x_t), 1e-12);
}

TEST(Schedule, ForwardSampleRejectsUncentered) {
  NoiseSchedule sch = build_schedule(100, 10, 1e-5);
  std::vector<double> x0 = {1, 1, 1, 2, 2, 2};  // CoM well away from 0
  Rng rng(1);
  EXPECT_THROW(forward_sample(x0, sch, 5, rng), ShapeError);
}

TEST(Schedule, TerminalSampleDecorrelatedFromData) {
  NoiseSchedule sch = build_schedule(1000, 10, 1e-5);
  const int n = 10000;
  Rng rng(derive_seed(4, "decorr"));
  double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
  for (int k = 0; k < n; ++k) {
    auto x0 = sample_subspace_noise(4, rng);
    for (auto& v : x0) v *= 2.0;
    auto fs = forward_sample(x0, sch, sch.horizon, rng);
    const double a = x0[0], b = fs.x_t[0];
    sx += a;
    sy += b;
    sxx += a * a;
    syy += b * b;
    sxy += a * b;
  }
  const double corr = (sxy - sx * sy / n) /
                      std::sqrt((sxx - sx * sx / n) * (syy - sy * sy / n));
  EXPECT_LT(std::abs(corr), 3.0 / std::sqrt(static_cast<double>(n)));
}

TEST(Schedule, TwoStepCompositionMatchesDirectMarginal) {
  NoiseSchedule sch = build_schedule(1000, 10, 1e-5);
  const std::size_t t1 = 300, t2 = 700;
  const std::size_t m = 4;
  Rng rng(derive_seed(5, "compose"));
  std::vector<double> x0 = sample_subspace_noise(m, rng);
  for (auto& v : x0) v *= 1.3;

  const double a_step = sch.alpha[t2] / sch.alpha[t1];
  const double s_step2 = sch.sigma[t2] * sch.sigma[t2] -
                         a_step * a_step * sch.sigma[t1] * sch.sigma[t1];
  const double s_step = std::sqrt(s_step2);

  const int n = 100000;
  double direct_mean = 0, direct_m2 = 0, composed_mean = 0, composed_m2 = 0;
  Rng r1(derive_seed(6, "compose-direct"));
  Rng r2(derive_seed(7, "compose-two-step"));
  for (int k = 0; k < n; ++k) {
    auto d = forward_sample(x0, sch, t2, r1);
    direct_mean += d.x_t[0];
    direct_m2 += d.x_t[0] * d.x_t[0];

    auto first = forward_sample(x0, sch, t1, r2);
    auto eps2 = sample_subspace_noise(m, r2);
    const double v = a_step * first.x_t[0] + s_step * eps2[0];
    composed_mean += v;
    composed_m2 += v * v;
  }
  direct_mean /= n;
  composed_mean /= n;
  const double direct_var = direct_m2 / n - direct_mean * direct_mean;
  const double composed_var = composed_m2 / n - composed_mean * composed_mean;

  const double sigma_mean = std::sqrt(direct_var / n) + std::sqrt(composed_var / n);
  EXPECT_NEAR(direct_mean, composed_mean, 3 * sigma_mean);
  EXPECT_NEAR(direct_var / composed_var, 1.0, 0.02);
}

TEST(Schedule, CsvDump) {
  NoiseSchedule sch = build_schedule(10, 2, 1e-4);
  std::ostringstream os;
  dump_schedule_csv(os, sch);
  std::istringstream is(os.str());
  std::string header;
  std::getline(is, header);
  EXPECT_EQ(header, "t,alpha,sigma");
  int rows = 0;
  std::string line;
  while (std::getline(is, line))
    if (!line.empty()) ++rows;
  EXPECT_EQ(rows, 11);
}
