#include "cvae/sampling.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

using cvae::LatentNoise;
using cvae::log_density_diag_normal;
using cvae::log_density_mv_student_t;
using cvae::Rng;
using cvae::sample_chi_square;
using cvae::sample_gamma;
using cvae::sample_latent_noise;
using cvae::sample_standard_normal;

namespace {

constexpr double kNu = 1.0 / 0.15;  // DoF at kappa_d = 0.15

TEST(SampleGamma, EmpiricalMeanMatchesShape) {
  Rng rng(0);
  const double shape = 3.3335;
  double sum = 0.0;
  for (int i = 0; i < 100000; ++i) sum += sample_gamma(shape, rng);
  const double mean = sum / 100000.0;
  EXPECT_GE(mean, 3.27);
  EXPECT_LE(mean, 3.40);
}

TEST(SampleGamma, DrawsArePositive) {
  Rng rng(3);
  for (int i = 0; i < 10000; ++i) EXPECT_GT(sample_gamma(3.3335, rng), 0.0);
  for (int i = 0; i < 10000; ++i) EXPECT_GT(sample_gamma(0.4, rng), 0.0);
}

TEST(SampleGamma, DeterministicPerStream) {
  Rng a(9, "gamma"), b(9, "gamma");
  EXPECT_EQ(sample_gamma(3.3335, a), sample_gamma(3.3335, b));
}

TEST(SampleGamma, RejectsBadShape) {
  Rng rng(0);
  EXPECT_THROW(sample_gamma(0.0, rng), std::invalid_argument);
  EXPECT_THROW(sample_gamma(-1.0, rng), std::invalid_argument);
}

TEST(SampleGamma, SmallShapeMeanIsRight) {
  Rng rng(1);
  const double shape = 0.5;
  double sum = 0.0;
  for (int i = 0; i < 100000; ++i) sum += sample_gamma(shape, rng);
  EXPECT_NEAR(sum / 100000.0, shape, 0.02);
}

TEST(SampleLatentNoise, GaussianLimitMatchesNormalSampler) {
  // At kappa_d = 0 the draw is exactly the normal sampler's output for the
  // same stream.
  Rng a(0, "noise"), b(0, "noise");
  const LatentNoise noise = sample_latent_noise(2, 0.0, a);
  const auto direct = sample_standard_normal(2, b);
  EXPECT_EQ(noise.epsilon, direct);
  EXPECT_TRUE(std::isinf(noise.dof));
}

TEST(SampleLatentNoise, SharedRadialFactorIsExact) {
  // Replaying the stream shows eps = g * sqrt(nu / w) with one shared w.
  Rng a(0, "noise", 5), b(0, "noise", 5);
  const LatentNoise noise = sample_latent_noise(2, 0.15, a);
  const auto g = sample_standard_normal(2, b);
  const double w = sample_chi_square(kNu, b);
  const double scale = std::sqrt(kNu / w);
  EXPECT_DOUBLE_EQ(noise.epsilon[0], g[0] * scale);
  EXPECT_DOUBLE_EQ(noise.epsilon[1], g[1] * scale);
  EXPECT_DOUBLE_EQ(noise.epsilon[0] / g[0], noise.epsilon[1] / g[1]);
  EXPECT_DOUBLE_EQ(noise.dof, kNu);
}

TEST(SampleLatentNoise, StudentTVarianceOver200kDraws) {
  // Analytic per-coordinate variance nu/(nu-2) = 1.42857...
  Rng rng(0, "variance-check");
  double s0 = 0.0, s1 = 0.0, q0 = 0.0, q1 = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const LatentNoise noise = sample_latent_noise(2, 0.15, rng);
    s0 += noise.epsilon[0];
    s1 += noise.epsilon[1];
    q0 += noise.epsilon[0] * noise.epsilon[0];
    q1 += noise.epsilon[1] * noise.epsilon[1];
  }
  const double var0 = q0 / n - (s0 / n) * (s0 / n);
  const double var1 = q1 / n - (s1 / n) * (s1 / n);
  EXPECT_GE(var0, 1.36);
  EXPECT_LE(var0, 1.50);
  EXPECT_GE(var1, 1.36);
  EXPECT_LE(var1, 1.50);
}

TEST(SampleLatentNoise, HeavierTailsThanGaussian) {
  Rng rng_t(0, "tails-t"), rng_n(0, "tails-n");
  int exceed_t = 0, exceed_n = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    if (std::abs(sample_latent_noise(2, 0.15, rng_t).epsilon[0]) > 4.0) ++exceed_t;
    if (std::abs(sample_latent_noise(2, 0.0, rng_n).epsilon[0]) > 4.0) ++exceed_n;
  }
  EXPECT_GT(exceed_t, exceed_n);
}

TEST(SampleLatentNoise, RejectsBadArguments) {
  Rng rng(0);
  EXPECT_THROW(sample_latent_noise(0, 0.0, rng), std::invalid_argument);
  EXPECT_THROW(sample_latent_noise(2, -0.1, rng), std::invalid_argument);
}

TEST(LogDensityDiagNormal, PointValues) {
  const std::vector<double> zero = {0.0}, one = {1.0};
  EXPECT_NEAR(log_density_diag_normal(zero, zero, one), -0.918939, 1e-6);
  const std::vector<double> z1 = {1.0};
  EXPECT_NEAR(log_density_diag_normal(z1, zero, one), -1.418939, 1e-6);
  const std::vector<double> two = {2.0};
  EXPECT_NEAR(log_density_diag_normal(zero, zero, two),
              -0.918939 - std::log(2.0), 1e-6);
}

TEST(LogDensityDiagNormal, RejectsBadSigma) {
  const std::vector<double> z = {0.0}, mu = {0.0}, bad = {0.0};
  EXPECT_THROW(log_density_diag_normal(z, mu, bad), std::domain_error);
}

TEST(LogDensityStudentT, CenterValue) {
  // ln G((nu+2)/2) - ln G(nu/2) - ln(nu*pi) at nu = 1/0.15, d = 2;
  // high-precision reference -1.8378770664093455.
  const std::vector<double> z = {0.0, 0.0}, mu = {0.0, 0.0}, sig = {1.0, 1.0};
  EXPECT_NEAR(log_density_mv_student_t(z, mu, sig, kNu), -1.8378770664093455, 1e-3);
  EXPECT_NEAR(log_density_mv_student_t(z, mu, sig, kNu), -1.8378770664093455, 1e-10);
}

TEST(LogDensityStudentT, IntegratesToOneOn2dGrid) {
  // Trapezoid quadrature over [-30,30]^2.
  const std::vector<double> mu = {0.0, 0.0}, sig = {1.0, 1.0};
  const int n = 1500;
  const double lo = -30.0, hi = 30.0;
  const double h = (hi - lo) / n;
  double integral = 0.0;
  for (int i = 0; i <= n; ++i) {
    const double wx = (i == 0 || i == n) ? 0.5 : 1.0;
    const double x = lo + i * h;
    for (int j = 0; j <= n; ++j) {
      const double wy = (j == 0 || j == n) ? 0.5 : 1.0;
      const double y = lo + j * h;
      const std::vector<double> z = {x, y};
      integral += wx * wy * std::exp(log_density_mv_student_t(z, mu, sig, kNu));
    }
  }
  integral *= h * h;
  EXPECT_NEAR(integral, 1.0, 1e-3);
}

TEST(LogDensityStudentT, GaussianLimitAtHugeNu) {
  const std::vector<double> mu = {0.3, -0.7}, sig = {0.8, 1.4};
  for (double zx : {-3.0, -1.0, 0.0, 0.5, 2.5}) {
    const std::vector<double> z = {zx, 0.25 * zx};
    const double t = log_density_mv_student_t(z, mu, sig, 1e8);
    const double n = log_density_diag_normal(z, mu, sig);
    EXPECT_NEAR(t, n, 1e-4) << "z=" << zx;
  }
}

TEST(LogDensityStudentT, IntegratesToOneIn1d) {
  // Both densities cross-checked against quadrature on d = 1 grids.
  const std::vector<double> mu = {0.0}, sig = {1.0};
  const int n = 400000;
  const double lo = -60.0, hi = 60.0;
  const double h = (hi - lo) / n;
  double int_t = 0.0, int_n = 0.0;
  for (int i = 0; i <= n; ++i) {
    const double w = (i == 0 || i == n) ? 0.5 : 1.0;
    const std::vector<double> z = {lo + i * h};
    int_t += w * std::exp(log_density_mv_student_t(z, mu, sig, kNu));
    int_n += w * std::exp(log_density_diag_normal(z, mu, sig));
  }
  EXPECT_NEAR(int_t * h, 1.0, 1e-4);
  EXPECT_NEAR(int_n * h, 1.0, 1e-4);
}

TEST(LogDensityStudentT, RejectsBadArguments) {
  const std::vector<double> z = {0.0}, mu = {0.0}, sig = {1.0}, bad = {-1.0};
  EXPECT_THROW(log_density_mv_student_t(z, mu, sig, 0.0), std::domain_error);
  EXPECT_THROW(log_density_mv_student_t(z, mu, bad, kNu), std::domain_error);
  const std::vector<double> mu2 = {0.0, 0.0};
  EXPECT_THROW(log_density_mv_student_t(z, mu2, sig, kNu), std::invalid_argument);
}

}  // namespace
