#pragma once

// Per-image reconstruction log-likelihoods over a test split, reduced to the
// three generalized-mean metrics: decisiveness (r = 1), accuracy (r = 0,
// geometric mean), robustness (r = -2/3). All bookkeeping stays in natural
// log space; values are converted to log10 / scientific notation only for
// reporting.

#include <cmath>
#include <cstddef>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cvae/coupling.hpp"
#include "cvae/mnist.hpp"
#include "cvae/rng.hpp"
#include "cvae/sampling.hpp"
#include "cvae/textio.hpp"
#include "cvae/vae.hpp"

namespace cvae {

enum class EvalMode { kDeterministic, kSampled };

inline std::string to_string(EvalMode m) {
  return m == EvalMode::kDeterministic ? "deterministic" : "sampled";
}

inline EvalMode eval_mode_from_string(const std::string& s) {
  if (s == "deterministic") return EvalMode::kDeterministic;
  if (s == "sampled") return EvalMode::kSampled;
  throw std::invalid_argument("eval mode must be 'deterministic' or 'sampled'");
}

struct MetricsReport {
  double decisiveness_log10 = 0.0;
  double accuracy_log10 = 0.0;
  double robustness_log10 = 0.0;
  std::size_t n_images = 0;
  EvalMode mode = EvalMode::kDeterministic;
  double kappa_d = 0.0;
  double kappa_l = 0.0;
  std::size_t z_dim = 0;
  std::uint64_t seed = 0;
};

constexpr double kPowerMeanOrderSlack = 1e-9;

// ln p(x | x') for each image of `images`, batched through the coders.
// Deterministic mode decodes the posterior mean; sampled mode draws one
// reparameterized z per image from the evaluation substream
// (seed, "eval-noise", image_index).
inline std::vector<double> reconstruction_log_likelihoods(
    const VaeParams& params, const Tensor& images, EvalMode mode, double kappa_d,
    std::uint64_t seed, std::size_t chunk = 2048) {
  retain_malloc_arena();
  const std::size_t n = images.rows();
  const std::size_t d = images.cols();
  std::vector<double> out(n);
  Rng unused(0);
  for (std::size_t lo = 0; lo < n; lo += chunk) {
    const std::size_t hi = std::min(lo + chunk, n);
    const std::size_t b = hi - lo;
    Tensor x({b, d});
    std::copy(images.data.begin() + lo * d, images.data.begin() + hi * d,
              x.data.begin());
    const LatentStats stats = encode(params, x, false, unused);
    Tensor z = stats.mu;
    if (mode == EvalMode::kSampled) {
      const std::size_t zd = params.z_dim;
      for (std::size_t i = 0; i < b; ++i) {
        Rng noise_rng(seed, "eval-noise", lo + i);
        const LatentNoise noise = sample_latent_noise(zd, kappa_d, noise_rng);
        for (std::size_t j = 0; j < zd; ++j) {
          z(i, j) = stats.mu(i, j) + std::exp(stats.log_sigma(i, j)) * noise.epsilon[j];
        }
      }
    }
    const Tensor x_prime = decode(params, z, false, unused);
    for (std::size_t i = 0; i < b; ++i) {
      double ll = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        ll += pixel_log_likelihood(x(i, j), x_prime(i, j));
      }
      out[lo + i] = ll;
    }
  }
  return out;
}

// ln p(x | x') for a single image.
inline double image_log_likelihood(const VaeParams& params,
                                   std::span<const double> image, EvalMode mode,
                                   double kappa_d = 0.0, std::uint64_t seed = 0,
                                   std::size_t image_index = 0) {
  if (image.size() != params.input_dim) {
    throw std::invalid_argument("image_log_likelihood: image width mismatch");
  }
  Tensor x({1, image.size()});
  std::copy(image.begin(), image.end(), x.data.begin());
  Rng unused(0);
  const LatentStats stats = encode(params, x, false, unused);
  Tensor z = stats.mu;
  if (mode == EvalMode::kSampled) {
    Rng noise_rng(seed, "eval-noise", image_index);
    const LatentNoise noise = sample_latent_noise(params.z_dim, kappa_d, noise_rng);
    for (std::size_t j = 0; j < params.z_dim; ++j) {
      z(0, j) = stats.mu(0, j) + std::exp(stats.log_sigma(0, j)) * noise.epsilon[j];
    }
  }
  const Tensor x_prime = decode(params, z, false, unused);
  double ll = 0.0;
  for (std::size_t j = 0; j < image.size(); ++j) {
    ll += pixel_log_likelihood(x(0, j), x_prime(0, j));
  }
  return ll;
}

// Reduces a set of natural-log likelihoods to the three metrics (log10).
inline MetricsReport metrics_from_log_likelihoods(std::span<const double> lls) {
  if (lls.empty()) throw std::invalid_argument("metrics: empty likelihood set");
  constexpr double kLn10 = 2.302585092994045684;
  MetricsReport r;
  r.n_images = lls.size();
  r.decisiveness_log10 = generalized_mean_log(lls, 1.0) / kLn10;
  r.accuracy_log10 = generalized_mean_log(lls, 0.0) / kLn10;
  r.robustness_log10 = generalized_mean_log(lls, -2.0 / 3.0) / kLn10;
  const double slack =
      kPowerMeanOrderSlack * (1.0 + std::abs(r.accuracy_log10));
  if (!(r.robustness_log10 <= r.accuracy_log10 + slack &&
        r.accuracy_log10 <= r.decisiveness_log10 + slack)) {
    throw std::logic_error("metrics: power-mean ordering violated");
  }
  return r;
}

inline MetricsReport evaluate(const VaeParams& params, const Dataset& test,
                              EvalMode mode, double kappa_d, double kappa_l,
                              std::uint64_t seed) {
  if (test.size() == 0) throw std::invalid_argument("evaluate: empty test set");
  const std::vector<double> lls =
      reconstruction_log_likelihoods(params, test.images, mode, kappa_d, seed);
  MetricsReport r = metrics_from_log_likelihoods(lls);
  r.mode = mode;
  r.kappa_d = kappa_d;
  r.kappa_l = kappa_l;
  r.z_dim = params.z_dim;
  r.seed = seed;
  return r;
}

// Equal-width histogram over [min, max]; counts sum to the input size.
struct HistogramBins {
  double lo = 0.0;
  double hi = 0.0;
  std::vector<std::size_t> counts;
};

inline HistogramBins histogram(std::span<const double> values, std::size_t bin_count) {
  if (bin_count == 0) throw std::invalid_argument("histogram: bin_count must be > 0");
  if (values.empty()) throw std::invalid_argument("histogram: empty input");
  HistogramBins h;
  h.lo = *std::min_element(values.begin(), values.end());
  h.hi = *std::max_element(values.begin(), values.end());
  h.counts.assign(bin_count, 0);
  const double width = (h.hi - h.lo) / static_cast<double>(bin_count);
  for (double v : values) {
    std::size_t idx = 0;
    if (width > 0.0) {
      idx = static_cast<std::size_t>((v - h.lo) / width);
      if (idx >= bin_count) idx = bin_count - 1;
    }
    ++h.counts[idx];
  }
  return h;
}

// "2.25e-58"-style rendering of a value given as log10.
inline std::string sci_from_log10(double log10_value) {
  double e = std::floor(log10_value);
  double mantissa = std::pow(10.0, log10_value - e);
  if (mantissa >= 9.995) {  // rounds to 10.00 at 2 decimals
    mantissa /= 10.0;
    e += 1.0;
  }
  return format_fixed(mantissa, 2) + "e" + (e < 0 ? "-" : "+") +
         std::to_string(static_cast<long long>(std::abs(e)));
}

inline std::string metrics_csv_header() {
  return "kappa_d,kappa_l,z_dim,n,decisiveness_log10,accuracy_log10,"
         "robustness_log10,mode,seed";
}

inline std::string metrics_csv_row(const MetricsReport& r) {
  return format_double(r.kappa_d) + "," + format_double(r.kappa_l) + "," +
         std::to_string(r.z_dim) + "," + std::to_string(r.n_images) + "," +
         format_double(r.decisiveness_log10) + "," + format_double(r.accuracy_log10) +
         "," + format_double(r.robustness_log10) + "," + to_string(r.mode) + "," +
         std::to_string(r.seed);
}

inline void write_metrics_csv(const std::filesystem::path& path,
                              std::span<const MetricsReport> reports) {
  std::string text = metrics_csv_header() + "\n";
  for (const MetricsReport& r : reports) text += metrics_csv_row(r) + "\n";
  write_text_file(path, text);
}

// Human-readable table mirroring the four-configuration comparison layout.
inline std::string metrics_table(std::span<const MetricsReport> reports) {
  std::string out = "kappa_D  kappa_L  Decisiveness  Accuracy      Robustness\n";
  for (const MetricsReport& r : reports) {
    auto pad = [](std::string s, std::size_t w) {
      while (s.size() < w) s += ' ';
      return s;
    };
    out += pad(format_double(r.kappa_d), 9) + pad(format_double(r.kappa_l), 9) +
           pad(sci_from_log10(r.decisiveness_log10), 14) +
           pad(sci_from_log10(r.accuracy_log10), 14) +
           sci_from_log10(r.robustness_log10) + "\n";
  }
  return out;
}

inline void write_likelihoods_csv(const std::filesystem::path& path,
                                  std::span<const double> natural_log_lls) {
  constexpr double kLn10 = 2.302585092994045684;
  std::string text = "index,log10_likelihood\n";
  for (std::size_t i = 0; i < natural_log_lls.size(); ++i) {
    text += std::to_string(i) + "," + format_double(natural_log_lls[i] / kLn10) + "\n";
  }
  write_text_file(path, text);
}

}  // namespace cvae
