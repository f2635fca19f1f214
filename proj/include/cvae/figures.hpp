#pragma once

// Figure emission: latent scatter and likelihood histogram as self-contained
// SVG, image grids as binary PGM (P5). Everything is rendered from module
// outputs with deterministic text formatting, so figure files are
// byte-stable across runs and easy to assert against in tests.
//
// The scatter/histogram SVGs carry machine-readable data-* attributes
// (bounding box, metric positions, bin counts) holding the exact values the
// plots were drawn from.

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cvae/metrics.hpp"
#include "cvae/mnist.hpp"
#include "cvae/sampling.hpp"
#include "cvae/textio.hpp"
#include "cvae/vae.hpp"

namespace cvae {

// Fixed palette for the 10 digit classes (documented in the README).
inline constexpr const char* kDigitPalette[10] = {
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
};

struct LatentScatter {
  double xmin = 0.0, xmax = 0.0, ymin = 0.0, ymax = 0.0;
  std::size_t points = 0;

  double area() const { return (xmax - xmin) * (ymax - ymin); }
};

namespace detail {

struct AxisMap {
  double lo, hi;      // data range
  double px0, px1;    // pixel range
  double to_px(double v) const {
    const double denom = hi - lo;
    if (denom == 0.0) return 0.5 * (px0 + px1);
    return px0 + (v - lo) / denom * (px1 - px0);
  }
};

}  // namespace detail

// One point per test image at (mu_1, mu_2), colored by digit label.
// Requires a 2-D latent space.
inline LatentScatter fig_latent(const VaeParams& params, const Dataset& test,
                                const std::filesystem::path& out) {
  if (params.z_dim != 2) {
    throw std::invalid_argument(
        "fig_latent: requires z_dim = 2 (got z_dim = " + std::to_string(params.z_dim) +
        "); train a 2-D latent model to plot the manifold");
  }
  if (test.size() == 0) throw std::invalid_argument("fig_latent: empty test set");

  // Encode in chunks, inference mode.
  const std::size_t n = test.size();
  std::vector<double> mx(n), my(n);
  Rng unused(0);
  const std::size_t chunk = 2048;
  for (std::size_t lo = 0; lo < n; lo += chunk) {
    const std::size_t hi = std::min(lo + chunk, n);
    Tensor x({hi - lo, test.images.cols()});
    std::copy(test.images.data.begin() + lo * test.images.cols(),
              test.images.data.begin() + hi * test.images.cols(), x.data.begin());
    const LatentStats stats = encode(params, x, false, unused);
    for (std::size_t i = 0; i < hi - lo; ++i) {
      mx[lo + i] = stats.mu(i, 0);
      my[lo + i] = stats.mu(i, 1);
    }
  }

  LatentScatter info;
  info.points = n;
  info.xmin = *std::min_element(mx.begin(), mx.end());
  info.xmax = *std::max_element(mx.begin(), mx.end());
  info.ymin = *std::min_element(my.begin(), my.end());
  info.ymax = *std::max_element(my.begin(), my.end());

  const double padx = info.xmax > info.xmin ? 0.05 * (info.xmax - info.xmin) : 1.0;
  const double pady = info.ymax > info.ymin ? 0.05 * (info.ymax - info.ymin) : 1.0;
  const detail::AxisMap xm{info.xmin - padx, info.xmax + padx, 60.0, 620.0};
  const detail::AxisMap ym{info.ymin - pady, info.ymax + pady, 600.0, 20.0};  // y up

  std::string svg;
  svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"720\" height=\"648\""
         " data-xmin=\"" + format_double(info.xmin) +
         "\" data-xmax=\"" + format_double(info.xmax) +
         "\" data-ymin=\"" + format_double(info.ymin) +
         "\" data-ymax=\"" + format_double(info.ymax) +
         "\" data-points=\"" + std::to_string(info.points) + "\">\n";
  svg += "<rect x=\"60\" y=\"20\" width=\"560\" height=\"580\" fill=\"white\" "
         "stroke=\"#333333\"/>\n";
  // Axis labels: data extremes.
  svg += "<text x=\"60\" y=\"618\" font-size=\"11\">" + format_fixed(xm.lo, 2) +
         "</text>\n";
  svg += "<text x=\"585\" y=\"618\" font-size=\"11\">" + format_fixed(xm.hi, 2) +
         "</text>\n";
  svg += "<text x=\"8\" y=\"600\" font-size=\"11\">" + format_fixed(ym.lo, 2) +
         "</text>\n";
  svg += "<text x=\"8\" y=\"28\" font-size=\"11\">" + format_fixed(ym.hi, 2) +
         "</text>\n";
  svg += "<text x=\"300\" y=\"640\" font-size=\"12\">mu_1</text>\n";
  svg += "<text x=\"8\" y=\"320\" font-size=\"12\">mu_2</text>\n";
  for (std::size_t i = 0; i < n; ++i) {
    svg += "<circle cx=\"" + format_fixed(xm.to_px(mx[i]), 2) + "\" cy=\"" +
           format_fixed(ym.to_px(my[i]), 2) + "\" r=\"2\" fill=\"" +
           kDigitPalette[test.labels[i]] + "\" fill-opacity=\"0.7\"/>\n";
  }
  // Legend: rect swatches so point circles stay countable.
  for (int d = 0; d < 10; ++d) {
    const double y = 40.0 + 22.0 * d;
    svg += "<rect x=\"640\" y=\"" + format_fixed(y, 2) +
           "\" width=\"14\" height=\"14\" fill=\"" + kDigitPalette[d] + "\"/>\n";
    svg += "<text x=\"660\" y=\"" + format_fixed(y + 12.0, 2) +
           "\" font-size=\"12\">" + std::to_string(d) + "</text>\n";
  }
  svg += "</svg>\n";
  write_text_file(out, svg);
  return info;
}

// Histogram of log10 reconstruction likelihoods with dashed vertical lines
// at the three metric positions: robustness red, accuracy blue,
// decisiveness green.
inline void fig_hist(std::span<const double> log10_lls, const MetricsReport& report,
                     std::size_t bins, const std::filesystem::path& out) {
  if (log10_lls.empty()) throw std::invalid_argument("fig_hist: empty likelihood set");
  const HistogramBins h = histogram(log10_lls, bins);

  double xlo = std::min(h.lo, report.robustness_log10);
  double xhi = std::max(h.hi, report.decisiveness_log10);
  const double pad = xhi > xlo ? 0.02 * (xhi - xlo) : 1.0;
  xlo -= pad;
  xhi += pad;
  const detail::AxisMap xm{xlo, xhi, 60.0, 620.0};
  std::size_t max_count = 1;
  for (std::size_t c : h.counts) max_count = std::max(max_count, c);
  const detail::AxisMap ym{0.0, static_cast<double>(max_count), 600.0, 30.0};

  std::string svg;
  svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"648\""
         " data-n=\"" + std::to_string(log10_lls.size()) +
         "\" data-bins=\"" + std::to_string(h.counts.size()) + "\">\n";
  svg += "<rect x=\"60\" y=\"30\" width=\"560\" height=\"570\" fill=\"white\" "
         "stroke=\"#333333\"/>\n";
  const double bin_width = (h.hi - h.lo) / static_cast<double>(h.counts.size());
  for (std::size_t b = 0; b < h.counts.size(); ++b) {
    const double lo = h.lo + bin_width * static_cast<double>(b);
    const double hi = b + 1 == h.counts.size() ? h.hi : lo + bin_width;
    const double px0 = xm.to_px(lo);
    const double px1 = h.hi == h.lo ? px0 + 8.0 : xm.to_px(hi);
    const double py = ym.to_px(static_cast<double>(h.counts[b]));
    svg += "<rect class=\"bin\" data-count=\"" + std::to_string(h.counts[b]) +
           "\" x=\"" + format_fixed(px0, 2) + "\" y=\"" + format_fixed(py, 2) +
           "\" width=\"" + format_fixed(std::max(0.5, px1 - px0), 2) +
           "\" height=\"" + format_fixed(600.0 - py, 2) +
           "\" fill=\"#9ecae1\" stroke=\"#4292c6\"/>\n";
  }
  struct Line {
    const char* metric;
    const char* color;
    double log10;
  };
  const Line lines[3] = {
      {"robustness", "#d62728", report.robustness_log10},
      {"accuracy", "#1f77b4", report.accuracy_log10},
      {"decisiveness", "#2ca02c", report.decisiveness_log10},
  };
  for (const Line& l : lines) {
    const double px = xm.to_px(l.log10);
    svg += "<line class=\"metric\" data-metric=\"" + std::string(l.metric) +
           "\" data-log10=\"" + format_double(l.log10) + "\" x1=\"" +
           format_fixed(px, 2) + "\" y1=\"30\" x2=\"" + format_fixed(px, 2) +
           "\" y2=\"600\" stroke=\"" + l.color +
           "\" stroke-width=\"2\" stroke-dasharray=\"6,4\"/>\n";
  }
  svg += "<text x=\"240\" y=\"640\" font-size=\"12\">log10 likelihood</text>\n";
  svg += "<text x=\"66\" y=\"22\" font-size=\"12\">robustness=" +
         sci_from_log10(report.robustness_log10) + " accuracy=" +
         sci_from_log10(report.accuracy_log10) + " decisiveness=" +
         sci_from_log10(report.decisiveness_log10) + "</text>\n";
  svg += "</svg>\n";
  write_text_file(out, svg);
}

// -- image grids ----------------------------------------------------------------

enum class GridSource { kOriginals, kReconstructions, kSamples };

inline GridSource grid_source_from_string(const std::string& s) {
  if (s == "originals") return GridSource::kOriginals;
  if (s == "reconstructions") return GridSource::kReconstructions;
  if (s == "samples") return GridSource::kSamples;
  throw std::invalid_argument(
      "grid source must be originals|reconstructions|samples");
}

inline void write_pgm(const std::filesystem::path& path, std::size_t width,
                      std::size_t height, std::span<const std::uint8_t> pixels) {
  if (pixels.size() != width * height) {
    throw std::invalid_argument("write_pgm: pixel count mismatch");
  }
  std::string out = "P5\n" + std::to_string(width) + " " + std::to_string(height) +
                    "\n255\n";
  out.append(reinterpret_cast<const char*>(pixels.data()), pixels.size());
  write_text_file(path, out);
}

struct PgmImage {
  std::size_t width = 0, height = 0;
  std::vector<std::uint8_t> pixels;
};

inline PgmImage read_pgm(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  const std::string_view s(reinterpret_cast<const char*>(bytes.data()), bytes.size());
  std::size_t pos = 0;
  const auto token = [&]() {
    while (pos < s.size() && (s[pos] == ' ' || s[pos] == '\n' || s[pos] == '\t')) ++pos;
    const std::size_t start = pos;
    while (pos < s.size() && s[pos] != ' ' && s[pos] != '\n' && s[pos] != '\t') ++pos;
    return std::string(s.substr(start, pos - start));
  };
  if (token() != "P5") throw std::runtime_error("read_pgm: not a P5 file");
  PgmImage img;
  img.width = parse_u64(token());
  img.height = parse_u64(token());
  if (token() != "255") throw std::runtime_error("read_pgm: unsupported max value");
  ++pos;  // single whitespace after maxval
  if (bytes.size() - pos != img.width * img.height) {
    throw std::runtime_error("read_pgm: pixel payload size mismatch");
  }
  img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.end());
  return img;
}

constexpr std::size_t kGridSeparator = 2;       // pixels between tiles
constexpr std::uint8_t kGridSeparatorValue = 255;

// Tiles rows x cols images of 28x28 bytes into one grid image.
inline PgmImage assemble_grid(const std::vector<std::vector<std::uint8_t>>& tiles,
                              std::size_t rows, std::size_t cols) {
  if (rows * cols == 0) throw std::invalid_argument("grid: rows*cols must be >= 1");
  if (tiles.size() < rows * cols) {
    throw std::invalid_argument("grid: not enough images for the grid");
  }
  PgmImage img;
  img.width = cols * kImageCols + (cols - 1) * kGridSeparator;
  img.height = rows * kImageRows + (rows - 1) * kGridSeparator;
  img.pixels.assign(img.width * img.height, kGridSeparatorValue);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      const auto& tile = tiles[r * cols + c];
      if (tile.size() != kImagePixels) {
        throw std::invalid_argument("grid: tile must be 28x28");
      }
      const std::size_t y0 = r * (kImageRows + kGridSeparator);
      const std::size_t x0 = c * (kImageCols + kGridSeparator);
      for (std::size_t y = 0; y < kImageRows; ++y) {
        for (std::size_t x = 0; x < kImageCols; ++x) {
          img.pixels[(y0 + y) * img.width + x0 + x] = tile[y * kImageCols + x];
        }
      }
    }
  }
  return img;
}

inline std::vector<std::uint8_t> tensor_row_to_bytes(const Tensor& t, std::size_t row) {
  std::vector<std::uint8_t> out(t.cols());
  for (std::size_t j = 0; j < t.cols(); ++j) out[j] = pixel_to_byte(t(row, j));
  return out;
}

// Originals come straight from the dataset bytes; reconstructions decode the
// posterior mean of the first rows*cols test images; samples decode prior
// draws z = eps from the configured latent noise, one substream per tile.
inline void fig_grid_originals(const Dataset& ds, std::size_t rows, std::size_t cols,
                               const std::filesystem::path& out) {
  if (ds.size() < rows * cols) {
    throw std::invalid_argument("fig_grid: not enough images for the grid");
  }
  std::vector<std::vector<std::uint8_t>> tiles;
  tiles.reserve(rows * cols);
  for (std::size_t i = 0; i < rows * cols; ++i) {
    tiles.push_back(tensor_row_to_bytes(ds.images, i));
  }
  const PgmImage img = assemble_grid(tiles, rows, cols);
  write_pgm(out, img.width, img.height, img.pixels);
}

inline void fig_grid_reconstructions(const VaeParams& params, const Dataset& ds,
                                     std::size_t rows, std::size_t cols,
                                     const std::filesystem::path& out) {
  const std::size_t n = rows * cols;
  if (ds.size() < n) {
    throw std::invalid_argument("fig_grid: not enough images for the grid");
  }
  Tensor x({n, ds.images.cols()});
  std::copy(ds.images.data.begin(), ds.images.data.begin() + n * ds.images.cols(),
            x.data.begin());
  Rng unused(0);
  const LatentStats stats = encode(params, x, false, unused);
  const Tensor x_prime = decode(params, stats.mu, false, unused);
  std::vector<std::vector<std::uint8_t>> tiles;
  tiles.reserve(n);
  for (std::size_t i = 0; i < n; ++i) tiles.push_back(tensor_row_to_bytes(x_prime, i));
  const PgmImage img = assemble_grid(tiles, rows, cols);
  write_pgm(out, img.width, img.height, img.pixels);
}

inline void fig_grid_samples(const VaeParams& params, double kappa_d,
                             std::uint64_t seed, std::size_t rows, std::size_t cols,
                             const std::filesystem::path& out) {
  const std::size_t n = rows * cols;
  if (n == 0) throw std::invalid_argument("fig_grid: rows*cols must be >= 1");
  Tensor z({n, params.z_dim});
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng(seed, "prior-sample", i);
    const LatentNoise noise = sample_latent_noise(params.z_dim, kappa_d, rng);
    for (std::size_t j = 0; j < params.z_dim; ++j) z(i, j) = noise.epsilon[j];
  }
  Rng unused(0);
  const Tensor x_prime = decode(params, z, false, unused);
  std::vector<std::vector<std::uint8_t>> tiles;
  tiles.reserve(n);
  for (std::size_t i = 0; i < n; ++i) tiles.push_back(tensor_row_to_bytes(x_prime, i));
  const PgmImage img = assemble_grid(tiles, rows, cols);
  write_pgm(out, img.width, img.height, img.pixels);
}

}  // namespace cvae
