#pragma once

// The coupled VAE: encoder, Student's-t reparameterization, decoder, coupled
// reconstruction loss, KL term, and total loss assembly.
//
// Architecture: encoder 784 -> hidden -> hidden -> (z_dim mu, z_dim log
// sigma), decoder z_dim -> hidden -> hidden -> 784 with sigmoid output.
// Hidden activations are ReLU with inverted dropout after each hidden layer;
// log sigma is clamped to [-7, 7]; the decoder output is clamped to
// [1e-7, 1 - 1e-7] before any likelihood use.
//
// Random draws inside one loss evaluation happen in a fixed order: encoder
// dropout (layer 1 then 2), latent noise (per example: z_dim normals, then
// the shared chi-square when kappa_d > 0), decoder dropout (layer 1 then 2).

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "cvae/autodiff.hpp"
#include "cvae/coupling.hpp"
#include "cvae/rng.hpp"
#include "cvae/sampling.hpp"
#include "cvae/tensor.hpp"

namespace cvae {

constexpr double kLogSigmaClampLo = -7.0;
constexpr double kLogSigmaClampHi = 7.0;
constexpr double kPixelClampLo = 1e-7;
constexpr double kPixelClampHi = 1.0 - 1e-7;

struct VaeParams {
  std::size_t input_dim = 784;
  std::size_t hidden_units = 500;
  std::size_t z_dim = 2;

  Tensor enc_w1, enc_b1;  // input -> hidden
  Tensor enc_w2, enc_b2;  // hidden -> hidden
  Tensor enc_wmu, enc_bmu;
  Tensor enc_wls, enc_bls;
  Tensor dec_w1, dec_b1;  // z -> hidden
  Tensor dec_w2, dec_b2;
  Tensor dec_w3, dec_b3;  // hidden -> input

  // Uniform fan-in init: He-style for the ReLU layers, Xavier-style for the
  // mu / log-sigma / output layers. Biases start at zero. Draw order is the
  // declaration order of the weight matrices.
  static VaeParams init(std::size_t input_dim, std::size_t hidden_units,
                        std::size_t z_dim, Rng& rng) {
    VaeParams p;
    p.input_dim = input_dim;
    p.hidden_units = hidden_units;
    p.z_dim = z_dim;
    const auto he = [&](std::size_t in, std::size_t out) {
      return uniform_matrix(in, out, std::sqrt(6.0 / static_cast<double>(in)), rng);
    };
    const auto xavier = [&](std::size_t in, std::size_t out) {
      return uniform_matrix(in, out, std::sqrt(6.0 / static_cast<double>(in + out)), rng);
    };
    p.enc_w1 = he(input_dim, hidden_units);
    p.enc_b1 = Tensor({hidden_units});
    p.enc_w2 = he(hidden_units, hidden_units);
    p.enc_b2 = Tensor({hidden_units});
    p.enc_wmu = xavier(hidden_units, z_dim);
    p.enc_bmu = Tensor({z_dim});
    p.enc_wls = xavier(hidden_units, z_dim);
    p.enc_bls = Tensor({z_dim});
    p.dec_w1 = he(z_dim, hidden_units);
    p.dec_b1 = Tensor({hidden_units});
    p.dec_w2 = he(hidden_units, hidden_units);
    p.dec_b2 = Tensor({hidden_units});
    p.dec_w3 = xavier(hidden_units, input_dim);
    p.dec_b3 = Tensor({input_dim});
    return p;
  }

  static VaeParams zeros(std::size_t input_dim, std::size_t hidden_units,
                         std::size_t z_dim) {
    Rng rng(0);
    VaeParams p = init(input_dim, hidden_units, z_dim, rng);
    for (auto& [name, t] : p.named()) {
      std::fill(t->data.begin(), t->data.end(), 0.0);
    }
    return p;
  }

  // Fixed parameter order; everything that serializes or optimizes params
  // iterates in this order.
  std::vector<std::pair<std::string, Tensor*>> named() {
    return {
        {"enc_w1", &enc_w1},   {"enc_b1", &enc_b1},   {"enc_w2", &enc_w2},
        {"enc_b2", &enc_b2},   {"enc_wmu", &enc_wmu}, {"enc_bmu", &enc_bmu},
        {"enc_wls", &enc_wls}, {"enc_bls", &enc_bls}, {"dec_w1", &dec_w1},
        {"dec_b1", &dec_b1},   {"dec_w2", &dec_w2},   {"dec_b2", &dec_b2},
        {"dec_w3", &dec_w3},   {"dec_b3", &dec_b3},
    };
  }
  std::vector<std::pair<std::string, const Tensor*>> named() const {
    auto mut = const_cast<VaeParams*>(this)->named();
    std::vector<std::pair<std::string, const Tensor*>> out;
    out.reserve(mut.size());
    for (auto& [n, t] : mut) out.emplace_back(n, t);
    return out;
  }

 private:
  static Tensor uniform_matrix(std::size_t in, std::size_t out, double limit, Rng& rng) {
    Tensor t({in, out});
    for (double& v : t.data) v = (2.0 * rng.uniform01() - 1.0) * limit;
    return t;
  }
};

// Per-batch encoder output: one mu / log-sigma row per example.
struct LatentStats {
  Tensor mu;         // B x z_dim
  Tensor log_sigma;  // B x z_dim, already clamped to [-7, 7]
};

struct LossBreakdown {
  double reconstruction = 0.0;
  double kl = 0.0;
  double total = 0.0;
  bool per_image = true;  // batch-mean semantics
};

// Node ids of interest in an assembled loss graph.
struct LossGraph {
  Graph graph;
  Graph::NodeId total = -1;
  Graph::NodeId reconstruction = -1;
  Graph::NodeId kl = -1;
  Graph::NodeId mu = -1;
  Graph::NodeId log_sigma = -1;
  Graph::NodeId z = -1;
  Graph::NodeId x_prime = -1;
  std::vector<std::pair<std::string, Graph::NodeId>> params;
};

namespace detail {

struct EncoderNodes {
  Graph::NodeId mu, log_sigma;
};

inline Graph::NodeId find_param(const LossGraph& lg, const std::string& name) {
  for (const auto& [n, id] : lg.params) {
    if (n == name) return id;
  }
  throw std::logic_error("loss graph: unknown parameter " + name);
}

inline void add_param_leaves(LossGraph& lg, const VaeParams& params) {
  for (const auto& [name, t] : params.named()) {
    lg.params.emplace_back(name, lg.graph.leaf(*t, name));
  }
}

inline EncoderNodes build_encoder(LossGraph& lg, Graph::NodeId x, double dropout_rate,
                                  bool training, Rng& rng) {
  Graph& g = lg.graph;
  const auto P = [&](const char* n) { return find_param(lg, n); };
  auto h1 = g.dropout(g.relu(g.add_rowvec(g.matmul(x, P("enc_w1")), P("enc_b1"))),
                      dropout_rate, training, rng);
  auto h2 = g.dropout(g.relu(g.add_rowvec(g.matmul(h1, P("enc_w2")), P("enc_b2"))),
                      dropout_rate, training, rng);
  EncoderNodes out;
  out.mu = g.add_rowvec(g.matmul(h2, P("enc_wmu")), P("enc_bmu"));
  out.log_sigma = g.clamp(g.add_rowvec(g.matmul(h2, P("enc_wls")), P("enc_bls")),
                          kLogSigmaClampLo, kLogSigmaClampHi);
  return out;
}

inline Graph::NodeId build_decoder(LossGraph& lg, Graph::NodeId z, double dropout_rate,
                                   bool training, Rng& rng) {
  Graph& g = lg.graph;
  const auto P = [&](const char* n) { return find_param(lg, n); };
  auto d1 = g.dropout(g.relu(g.add_rowvec(g.matmul(z, P("dec_w1")), P("dec_b1"))),
                      dropout_rate, training, rng);
  auto d2 = g.dropout(g.relu(g.add_rowvec(g.matmul(d1, P("dec_w2")), P("dec_b2"))),
                      dropout_rate, training, rng);
  auto logits = g.add_rowvec(g.matmul(d2, P("dec_w3")), P("dec_b3"));
  return g.clamp(g.sigmoid(logits), kPixelClampLo, kPixelClampHi);
}

}  // namespace detail

// Encoder pass over a batch (B x input_dim). Deterministic in inference
// mode; in training mode the dropout masks come from `rng`.
inline LatentStats encode(const VaeParams& params, const Tensor& x, bool training,
                          Rng& rng, double dropout_rate = 0.1) {
  if (x.cols() != params.input_dim) {
    throw std::invalid_argument("encode: input width mismatch");
  }
  LossGraph lg;
  detail::add_param_leaves(lg, params);
  const auto xid = lg.graph.constant(x, "x");
  const auto enc = detail::build_encoder(lg, xid, training ? dropout_rate : 0.0,
                                         training, rng);
  return LatentStats{lg.graph.value(enc.mu), lg.graph.value(enc.log_sigma)};
}

// Decoder pass over a batch of latent rows (B x z_dim). Output is strictly
// inside (0,1) thanks to the clamp.
inline Tensor decode(const VaeParams& params, const Tensor& z, bool training, Rng& rng,
                     double dropout_rate = 0.1) {
  if (z.cols() != params.z_dim) {
    throw std::invalid_argument("decode: latent width mismatch");
  }
  LossGraph lg;
  detail::add_param_leaves(lg, params);
  const auto zid = lg.graph.constant(z, "z");
  const auto out = detail::build_decoder(lg, zid, training ? dropout_rate : 0.0,
                                         training, rng);
  return lg.graph.value(out);
}

// z = mu + sigma .* eps, elementwise, for one example.
inline std::vector<double> reparameterize(std::span<const double> mu,
                                          std::span<const double> sigma,
                                          const LatentNoise& noise) {
  if (noise.epsilon.size() != mu.size() || sigma.size() != mu.size()) {
    throw std::invalid_argument("reparameterize: length mismatch");
  }
  std::vector<double> z(mu.size());
  for (std::size_t j = 0; j < z.size(); ++j) {
    z[j] = mu[j] + sigma[j] * noise.epsilon[j];
  }
  return z;
}

// Per-pixel Bernoulli log-likelihood with a real-valued target.
inline double pixel_log_likelihood(double x, double x_prime) {
  return x * std::log(x_prime) + (1.0 - x) * std::log(1.0 - x_prime);
}

// Sum over pixels of the coupled negative log-likelihood. Equals binary
// cross-entropy exactly at kappa_l = 0.
inline double coupled_reconstruction_loss(std::span<const double> x,
                                          std::span<const double> x_prime,
                                          double kappa_l) {
  if (x.size() != x_prime.size()) {
    throw std::invalid_argument("coupled_reconstruction_loss: length mismatch");
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    acc += coupled_nll_from_logp(pixel_log_likelihood(x[i], x_prime[i]), kappa_l);
  }
  return acc;
}

// KL contribution of one example. kappa_d = 0 uses the analytic
// diagonal-Gaussian form; kappa_d > 0 uses the single-sample Monte-Carlo
// estimate ln t(z; mu, sigma, nu) - ln N(z; 0, I) at the z produced by
// reparameterize for this example.
inline double kl_term(std::span<const double> mu, std::span<const double> log_sigma,
                      std::span<const double> z, double kappa_d) {
  check_coupling(kappa_d);
  if (mu.size() != log_sigma.size() || z.size() != mu.size()) {
    throw std::invalid_argument("kl_term: length mismatch");
  }
  const std::size_t d = mu.size();
  if (kappa_d == 0.0) {
    double acc = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double s2 = std::exp(2.0 * log_sigma[j]);
      acc += mu[j] * mu[j] + s2 - 1.0 - 2.0 * log_sigma[j];
    }
    return 0.5 * acc;
  }
  const double nu = 1.0 / kappa_d;
  std::vector<double> sigma(d), zero(d, 0.0), one(d, 1.0);
  for (std::size_t j = 0; j < d; ++j) sigma[j] = std::exp(log_sigma[j]);
  return log_density_mv_student_t(z, mu, sigma, nu) -
         log_density_diag_normal(z, zero, one);
}

struct TotalLossConfig {
  CouplingConfig coupling;
  double dropout_rate = 0.1;
  bool training = true;
};

// Assembles the full differentiable loss for a batch. Returns the graph with
// the ids of the scalar loss nodes; callers run backward(total) to get
// gradients for every parameter leaf.
inline LossGraph build_loss_graph(const VaeParams& params, const Tensor& x_batch,
                                  const TotalLossConfig& cfg, Rng& rng) {
  if (x_batch.cols() != params.input_dim || x_batch.shape.size() != 2) {
    throw std::invalid_argument("build_loss_graph: bad batch shape");
  }
  const std::size_t batch = x_batch.rows();
  const std::size_t zd = params.z_dim;
  const double kappa_d = cfg.coupling.kappa_d;
  const double kappa_l = cfg.coupling.kappa_l;
  const double drop = cfg.training ? cfg.dropout_rate : 0.0;

  LossGraph lg;
  Graph& g = lg.graph;
  detail::add_param_leaves(lg, params);
  const auto x = g.constant(x_batch, "x");

  const auto enc = detail::build_encoder(lg, x, drop, cfg.training, rng);
  lg.mu = enc.mu;
  lg.log_sigma = enc.log_sigma;
  const auto sigma = g.exp(enc.log_sigma);

  // Latent noise: one row per example, drawn after the encoder dropout.
  Tensor eps({batch, zd});
  for (std::size_t i = 0; i < batch; ++i) {
    const LatentNoise noise = sample_latent_noise(zd, kappa_d, rng);
    for (std::size_t j = 0; j < zd; ++j) eps(i, j) = noise.epsilon[j];
  }
  const auto eps_id = g.constant(std::move(eps), "eps");
  lg.z = g.add(enc.mu, g.mul(sigma, eps_id));

  lg.x_prime = detail::build_decoder(lg, lg.z, drop, cfg.training, rng);

  // Reconstruction: per-pixel coupled NLL, summed per image, batch mean.
  const auto log_xp = g.log(lg.x_prime);
  const auto log_1m_xp = g.log(g.scalar_minus(1.0, lg.x_prime));
  const auto one_minus_x = g.scalar_minus(1.0, x);
  const auto pixel_ll = g.add(g.mul(x, log_xp), g.mul(one_minus_x, log_1m_xp));
  const auto pixel_loss = g.coupled_nll(pixel_ll, kappa_l);
  lg.reconstruction = g.mean_all(g.row_sum(pixel_loss));

  // KL: analytic Gaussian form at kappa_d = 0, otherwise the single-sample
  // Monte-Carlo estimate evaluated at the reparameterized z.
  Graph::NodeId kl_per_example;
  if (kappa_d == 0.0) {
    const auto mu2 = g.mul(enc.mu, enc.mu);
    const auto sig2 = g.exp(g.mul_scalar(enc.log_sigma, 2.0));
    const auto inner =
        g.add(g.add(mu2, sig2), g.add_scalar(g.mul_scalar(enc.log_sigma, -2.0), -1.0));
    kl_per_example = g.mul_scalar(g.row_sum(inner), 0.5);
  } else {
    const double nu = 1.0 / kappa_d;
    const double dd = static_cast<double>(zd);
    const double t_const = std::lgamma(0.5 * (nu + dd)) - std::lgamma(0.5 * nu) -
                           0.5 * dd * std::log(nu * 3.14159265358979323846);
    const auto std_resid = g.div(g.sub(lg.z, enc.mu), sigma);
    const auto mahal = g.row_sum(g.mul(std_resid, std_resid));
    const auto t_tail =
        g.mul_scalar(g.log(g.add_scalar(g.mul_scalar(mahal, 1.0 / nu), 1.0)),
                     -0.5 * (nu + dd));
    const auto t_ll =
        g.add_scalar(g.add(t_tail, g.mul_scalar(g.row_sum(enc.log_sigma), -1.0)), t_const);
    const double n_const = -0.5 * dd * std::log(2.0 * 3.14159265358979323846);
    const auto n_ll =
        g.add_scalar(g.mul_scalar(g.row_sum(g.mul(lg.z, lg.z)), -0.5), n_const);
    kl_per_example = g.sub(t_ll, n_ll);
  }
  lg.kl = g.mean_all(kl_per_example);
  lg.total = g.add(lg.reconstruction, lg.kl);
  return lg;
}

// Forward-only convenience: batch-mean loss breakdown.
inline LossBreakdown total_loss(const VaeParams& params, const Tensor& x_batch,
                                const TotalLossConfig& cfg, Rng& rng) {
  LossGraph lg = build_loss_graph(params, x_batch, cfg, rng);
  LossBreakdown out;
  out.reconstruction = lg.graph.value(lg.reconstruction).data[0];
  out.kl = lg.graph.value(lg.kl).data[0];
  out.total = lg.graph.value(lg.total).data[0];
  return out;
}

}  // namespace cvae
