#include "unigem/sampler.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "oracles.hpp"
#include "unigem/denoiser.hpp"

using namespace unigem;
using unigem::testing::random_rotation;
using unigem::testing::rotate_coords;

namespace {

DenoiserConfig small_config() {
  DenoiserConfig cfg;
  cfg.hidden = 12;
  cfg.layers = 3;
  cfg.shared_layers = 1;
  cfg.atom_types = 5;
  return cfg;
}

}  // namespace

TEST(Sampler, ZeroNoisePredictionGivesPureRescaling) {
  NoiseSchedule sched = build_schedule(100, 10, 1e-5);
  Denoiser<double> net(small_config(), 1);
  // zero every coordinate MLP output layer: the network then predicts
  // eps_hat = 0 identically
  for (auto& [name, p] : net.params())
    if (name.find(".coord.w2") != std::string::npos)
      std::fill(p.data(), p.data() + p.size(), 0.0);

  Sampler<double> sampler(&net, sched);
  Rng rng(derive_seed(1, "zero-eps"));
  std::vector<double> x = sample_subspace_noise(4, rng);
  const std::vector<double> zero_noise(x.size(), 0.0);
  const auto c = conditional_coeffs(sched, 50);
  auto next = sampler.reverse_step(x, 50, zero_noise);
  for (std::size_t i = 0; i < x.size(); ++i)
    EXPECT_NEAR(next[i], x[i] / c.alpha_step, 1e-12);
}

TEST(Sampler, ChainConservesZeroCom) {
  NoiseSchedule sched = build_schedule(1000, 10, 1e-5);
  Denoiser<double> net(small_config(), 2);
  Sampler<double> sampler(&net, sched);
  SampleRequest req;
  req.count = 1;
  req.fixed_size = 6;
  req.seed = 7;
  auto out = sampler.generate(req, {});
  ASSERT_EQ(out.size(), 1u);
  EXPECT_LT(out[0].max_com_norm, 1e-9);
  EXPECT_EQ(out[0].steps, 1000u);
}

TEST(Sampler, GenerateContractAndDeterminism) {
  NoiseSchedule sched = build_schedule(60, 10, 1e-5);
  Denoiser<double> net(small_config(), 3);
  Sampler<double> sampler(&net, sched);
  std::map<std::size_t, double> hist = {{3, 0.5}, {5, 0.5}};
  SampleRequest req;
  req.count = 10;
  req.seed = 11;
  auto a = sampler.generate(req, hist);
  ASSERT_EQ(a.size(), 10u);
  for (const auto& g : a) {
    EXPECT_TRUE(g.molecule.atom_count() == 3 || g.molecule.atom_count() == 5);
    for (int ty : g.molecule.types) {
      EXPECT_GE(ty, 0);
      EXPECT_LT(ty, 5);
    }
    for (double v : g.molecule.coords) EXPECT_TRUE(std::isfinite(v));
  }
  auto b = sampler.generate(req, hist);
  for (std::size_t i = 0; i < a.size(); ++i) {
    ASSERT_EQ(a[i].molecule.coords.size(), b[i].molecule.coords.size());
    for (std::size_t k = 0; k < a[i].molecule.coords.size(); ++k)
      EXPECT_EQ(a[i].molecule.coords[k], b[i].molecule.coords[k]);
    EXPECT_EQ(a[i].molecule.types, b[i].molecule.types);
  }

  // fixed-size request bypasses the histogram
  SampleRequest fixed;
  fixed.count = 3;
  fixed.fixed_size = 4;
  fixed.seed = 1;
  for (const auto& g : sampler.generate(fixed, hist))
    EXPECT_EQ(g.molecule.atom_count(), 4u);
}

TEST(Sampler, WorkerCountDoesNotChangeResults) {
  NoiseSchedule sched = build_schedule(40, 10, 1e-5);
  Denoiser<double> net(small_config(), 4);
  Sampler<double> sampler(&net, sched);
  std::map<std::size_t, double> hist = {{4, 1.0}};
  SampleRequest req;
  req.count = 6;
  req.seed = 5;
  req.workers = 1;
  auto serial = sampler.generate(req, hist);
  req.workers = 2;
  auto parallel = sampler.generate(req, hist);
  for (std::size_t i = 0; i < serial.size(); ++i)
    for (std::size_t k = 0; k < serial[i].molecule.coords.size(); ++k)
      EXPECT_EQ(serial[i].molecule.coords[k], parallel[i].molecule.coords[k]);
}

TEST(Sampler, PathwiseEquivariance) {
  // rotating the prior draw and every injected noise rotates the output and
  // keeps predicted types identical
  NoiseSchedule sched = build_schedule(50, 10, 1e-5);
  Denoiser<double> net(small_config(), 6);
  Sampler<double> sampler(&net, sched);
  const std::size_t m = 5;

  Rng prior_rng(derive_seed(2, "equiv-prior"));
  std::vector<double> x_start = sample_subspace_noise(m, prior_rng);

  // pre-draw the noise stream
  std::map<std::size_t, std::vector<double>> noises;
  Rng noise_rng(derive_seed(3, "equiv-noise"));
  for (std::size_t t = sched.horizon; t >= 2; --t)
    noises[t] = sample_subspace_noise(m, noise_rng);

  double mc = 0;
  auto x0 = sampler.run_chain(
      x_start, &mc, [&](std::size_t t) { return noises.at(t); });
  auto types = sampler.assign_types(x0);

  Rng rot_rng(derive_seed(4, "equiv-rot"));
  const auto r = random_rotation(rot_rng);
  auto xr0 = sampler.run_chain(
      rotate_coords(r, x_start), &mc,
      [&](std::size_t t) { return rotate_coords(r, noises.at(t)); });
  auto rotated_expected = rotate_coords(r, x0);
  for (std::size_t i = 0; i < x0.size(); ++i)
    EXPECT_NEAR(xr0[i], rotated_expected[i], 1e-7);
  EXPECT_EQ(sampler.assign_types(xr0), types);
}

TEST(Sampler, GuidedLambdaZeroIsBitIdentical) {
  NoiseSchedule sched = build_schedule(50, 10, 1e-5);
  Denoiser<double> net(small_config(), 7);
  Sampler<double> sampler(&net, sched);
  Rng rng(derive_seed(5, "guided"));
  std::vector<double> x = sample_subspace_noise(4, rng);
  std::vector<double> noise = sample_subspace_noise(4, rng);
  GuidanceSpec g;
  g.target = 0.5;
  g.strength = 0.0;
  auto a = sampler.reverse_step(x, 20, noise);
  auto b = sampler.guided_step(x, 20, g, noise);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i], b[i]);
}

TEST(Sampler, GuidanceKeepsZeroComAndIsContinuousInLambda) {
  NoiseSchedule sched = build_schedule(50, 10, 1e-5);
  Denoiser<double> net(small_config(), 8);
  Sampler<double> sampler(&net, sched);
  Rng rng(derive_seed(6, "guided-com"));
  std::vector<double> x = sample_subspace_noise(5, rng);
  std::vector<double> noise = sample_subspace_noise(5, rng);

  GuidanceSpec g;
  g.target = 1.0;
  g.strength = 2.0;
  auto hard = sampler.guided_step(x, 30, g, noise);
  EXPECT_LT(com_norm(hard), 1e-9);

  auto base = sampler.reverse_step(x, 30, noise);
  g.strength = 1e-8;
  auto soft = sampler.guided_step(x, 30, g, noise);
  double diff = 0;
  for (std::size_t i = 0; i < base.size(); ++i)
    diff = std::max(diff, std::abs(soft[i] - base[i]));
  EXPECT_LT(diff, 1e-6);
  EXPECT_GT(diff, 0.0);  // the gradient actually engaged
}

TEST(Sampler, GuidanceWithoutPropertyHeadRejected) {
  NoiseSchedule sched = build_schedule(50, 10, 1e-5);
  DenoiserConfig cfg = small_config();
  cfg.property_head = false;
  Denoiser<double> net(cfg, 9);
  Sampler<double> sampler(&net, sched);
  std::vector<double> x(12, 0.0);
  GuidanceSpec g;
  g.strength = 1.0;
  EXPECT_THROW(sampler.guided_step(x, 10, g, x), ConfigError);
}

TEST(Sampler, PredictPropertyInvarianceAndStats) {
  NoiseSchedule sched = build_schedule(50, 10, 1e-5);
  Denoiser<double> net(small_config(), 10);
  PropertyStats stats;
  stats.name = "lumo";
  stats.mean = -0.1;
  stats.stddev = 0.2;
  Sampler<double> sampler(&net, sched, stats);

  Molecule mol;
  mol.types = {1, 0, 0, 0};
  Rng rng(derive_seed(7, "prop"));
  mol.coords = sample_subspace_noise(4, rng);
  // shift away from the origin; predict_property centers internally
  for (std::size_t i = 0; i < 4; ++i) mol.coords[3 * i] += 2.0;

  const double base = sampler.predict_property(mol);
  const auto r = random_rotation(rng);
  Molecule rotated = mol;
  rotated.coords = rotate_coords(r, mol.coords);
  EXPECT_NEAR(sampler.predict_property(rotated), base, 1e-8);

  // de-normalization round trip
  EXPECT_NEAR(stats.normalize(stats.denormalize(0.37)), 0.37, 1e-12);

  Sampler<double> no_stats(&net, sched);
  EXPECT_THROW(no_stats.predict_property(mol), ConfigError);
}

TEST(Sampler, EmptyHistogramRejected) {
  NoiseSchedule sched = build_schedule(50, 10, 1e-5);
  Denoiser<double> net(small_config(), 12);
  Sampler<double> sampler(&net, sched);
  SampleRequest req;
  req.count = 1;
  EXPECT_THROW(sampler.generate(req, {}), DataError);
}
