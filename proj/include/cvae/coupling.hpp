#pragma once

// Coupled (deformed) logarithm/exponential pair and log-space power means.
//
//   ln_k(x)  = (x^(k/(1+k)) - 1) / k        for k > 0,   ln x  at k = 0
//   exp_k(y) = (1 + k y)_+^((1+k)/k)        for k > 0,   e^y   at k = 0
//
// The two are mutually inverse wherever exp_k is positive, and ln_k(1/p)
// grows polynomially as p -> 0 when k > 0, so a loss built on it penalizes
// outlier likelihoods far harder than -ln p. Everything here is computed via
// expm1/log1p so the k -> 0 limit and the inverse-pair identity hold to
// double round-off.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

namespace cvae {

inline void check_coupling(double kappa) {
  if (!std::isfinite(kappa) || kappa < 0.0) {
    throw std::domain_error("coupling kappa must be finite and >= 0");
  }
}

// A single coupling hyperparameter (kappa >= 0; 0 is the classical limit).
struct Coupling {
  double kappa = 0.0;
  Coupling() = default;
  explicit Coupling(double k) : kappa(k) { check_coupling(k); }
};

// The pair of coupling hyperparameters a run is configured with:
// kappa_l deforms the reconstruction loss, kappa_d = 1/DoF sets the tail
// weight of the latent noise.
struct CouplingConfig {
  double kappa_l = 0.0;
  double kappa_d = 0.0;

  double dof() const {
    check_coupling(kappa_d);
    return kappa_d == 0.0 ? std::numeric_limits<double>::infinity()
                          : 1.0 / kappa_d;
  }
};

inline double coupled_log(double x, double kappa) {
  check_coupling(kappa);
  if (!std::isfinite(x) || x <= 0.0) {
    throw std::domain_error("coupled_log: x must be positive and finite");
  }
  if (kappa == 0.0) return std::log(x);
  const double kp = kappa / (1.0 + kappa);
  return std::expm1(kp * std::log(x)) / kappa;
}

inline double coupled_exp(double y, double kappa) {
  check_coupling(kappa);
  if (!std::isfinite(y)) {
    throw std::domain_error("coupled_exp: y must be finite");
  }
  if (kappa == 0.0) return std::exp(y);
  const double t = kappa * y;
  if (t <= -1.0) return 0.0;  // truncated branch of (1 + k y)_+
  return std::exp(std::log1p(t) * (1.0 + kappa) / kappa);
}

// ln_k(1/p) evaluated from l = ln p without ever forming p.
inline double coupled_nll_from_logp(double log_p, double kappa) {
  check_coupling(kappa);
  if (!std::isfinite(log_p)) {
    throw std::domain_error("coupled_nll_from_logp: log_p must be finite");
  }
  if (log_p > 0.0) {
    throw std::domain_error("coupled_nll_from_logp: log_p must be <= 0");
  }
  if (kappa == 0.0) return -log_p;
  const double kp = kappa / (1.0 + kappa);
  return std::expm1(-log_p * kp) / kappa;
}

// d/d(log_p) of coupled_nll_from_logp; used by the loss node in the graph.
inline double coupled_nll_dlogp(double log_p, double kappa) {
  if (kappa == 0.0) return -1.0;
  const double kp = kappa / (1.0 + kappa);
  return -std::exp(-log_p * kp) / (1.0 + kappa);
}

// A set of natural-log likelihoods l_i = ln p_i, p_i in (0,1].
using LogLikelihoodSet = std::vector<double>;

inline double logsumexp(std::span<const double> v) {
  if (v.empty()) throw std::invalid_argument("logsumexp: empty input");
  const double m = *std::max_element(v.begin(), v.end());
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

// ln M_r of the likelihoods, computed entirely in log space:
//   r != 0:  (logsumexp(r * l_i) - ln N) / r
//   r == 0:  mean(l_i)                       (geometric mean)
// Safe for l_i around -600 and far beyond; p_i is never materialized.
inline double generalized_mean_log(std::span<const double> log_values, double r) {
  if (log_values.empty()) {
    throw std::invalid_argument("generalized_mean_log: empty set");
  }
  for (double l : log_values) {
    if (!std::isfinite(l)) {
      throw std::domain_error("generalized_mean_log: entries must be finite");
    }
  }
  const double n = static_cast<double>(log_values.size());
  if (r == 0.0) {
    double s = 0.0;
    for (double l : log_values) s += l;
    return s / n;
  }
  std::vector<double> scaled(log_values.size());
  for (std::size_t i = 0; i < log_values.size(); ++i) scaled[i] = r * log_values[i];
  return (logsumexp(scaled) - std::log(n)) / r;
}

}  // namespace cvae
