#pragma once

// Samplers for the latent layer and the exact log-densities the Monte-Carlo
// KL estimator needs. All draws are deterministic functions of the Rng
// stream they are handed.

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include "cvae/rng.hpp"

namespace cvae {

// Gamma(shape, scale=1) via the Marsaglia-Tsang squeeze method.
// For shape < 1, draw Gamma(shape+1) and scale by U^(1/shape).
inline double sample_gamma(double shape, Rng& rng) {
  if (!std::isfinite(shape) || shape <= 0.0) {
    throw std::invalid_argument("sample_gamma: shape must be > 0 and finite");
  }
  if (shape < 1.0) {
    const double u = rng.uniform01();
    return sample_gamma(shape + 1.0, rng) * std::pow(u, 1.0 / shape);
  }
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x, v;
    do {
      x = rng.standard_normal();
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = rng.uniform01();
    const double x2 = x * x;
    if (u < 1.0 - 0.0331 * x2 * x2) return d * v;
    if (std::log(u) < 0.5 * x2 + d * (1.0 - v + std::log(v))) return d * v;
  }
}

inline double sample_chi_square(double nu, Rng& rng) {
  if (!std::isfinite(nu) || nu <= 0.0) {
    throw std::invalid_argument("sample_chi_square: nu must be > 0 and finite");
  }
  return 2.0 * sample_gamma(0.5 * nu, rng);
}

// One latent noise draw: epsilon plus the degrees of freedom it was drawn
// with (infinity in the Gaussian limit).
struct LatentNoise {
  std::vector<double> epsilon;
  double dof = std::numeric_limits<double>::infinity();
};

// kappa_d == 0: z_dim i.i.d. standard normals.
// kappa_d  > 0: multivariate Student's t with identity scale and
//               nu = 1/kappa_d, built as eps = g * sqrt(nu / w) with
//               g ~ N(0, I) and a single shared w ~ chi^2_nu.
// Draw order (fixed): the z_dim normals first, then w.
inline LatentNoise sample_latent_noise(std::size_t z_dim, double kappa_d, Rng& rng) {
  if (z_dim == 0) {
    throw std::invalid_argument("sample_latent_noise: z_dim must be >= 1");
  }
  if (!std::isfinite(kappa_d) || kappa_d < 0.0) {
    throw std::invalid_argument("sample_latent_noise: kappa_d must be finite and >= 0");
  }
  LatentNoise out;
  out.epsilon = sample_standard_normal(z_dim, rng);
  if (kappa_d == 0.0) return out;
  const double nu = 1.0 / kappa_d;
  out.dof = nu;
  const double w = sample_chi_square(nu, rng);
  const double scale = std::sqrt(nu / w);
  for (double& e : out.epsilon) e *= scale;
  return out;
}

inline double log_density_diag_normal(std::span<const double> z,
                                      std::span<const double> mu,
                                      std::span<const double> sigma) {
  const std::size_t d = z.size();
  if (mu.size() != d || sigma.size() != d) {
    throw std::invalid_argument("log_density_diag_normal: length mismatch");
  }
  double acc = -0.5 * static_cast<double>(d) * std::log(2.0 * 3.14159265358979323846);
  for (std::size_t j = 0; j < d; ++j) {
    if (!(sigma[j] > 0.0)) {
      throw std::domain_error("log_density_diag_normal: sigma must be > 0");
    }
    const double t = (z[j] - mu[j]) / sigma[j];
    acc -= std::log(sigma[j]) + 0.5 * t * t;
  }
  return acc;
}

// Multivariate Student's t with diagonal scale, ln density:
//   ln G((nu+d)/2) - ln G(nu/2) - (d/2) ln(nu*pi) - sum ln sigma_j
//     - ((nu+d)/2) ln(1 + (1/nu) sum ((z_j-mu_j)/sigma_j)^2)
inline double log_density_mv_student_t(std::span<const double> z,
                                       std::span<const double> mu,
                                       std::span<const double> sigma,
                                       double nu) {
  const std::size_t d = z.size();
  if (mu.size() != d || sigma.size() != d) {
    throw std::invalid_argument("log_density_mv_student_t: length mismatch");
  }
  if (!(nu > 0.0) || !std::isfinite(nu)) {
    throw std::domain_error("log_density_mv_student_t: nu must be > 0 and finite");
  }
  const double dd = static_cast<double>(d);
  double q = 0.0;
  double log_sigma_sum = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    if (!(sigma[j] > 0.0)) {
      throw std::domain_error("log_density_mv_student_t: sigma must be > 0");
    }
    const double t = (z[j] - mu[j]) / sigma[j];
    q += t * t;
    log_sigma_sum += std::log(sigma[j]);
  }
  return std::lgamma(0.5 * (nu + dd)) - std::lgamma(0.5 * nu) -
         0.5 * dd * std::log(nu * 3.14159265358979323846) - log_sigma_sum -
         0.5 * (nu + dd) * std::log1p(q / nu);
}

}  // namespace cvae
