#include "cvae/figures.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <string>
#include <vector>

#include "cvae/metrics.hpp"
#include "cvae/mnist.hpp"
#include "cvae/rng.hpp"
#include "cvae/vae.hpp"

using cvae::Dataset;
using cvae::fig_grid_originals;
using cvae::fig_grid_reconstructions;
using cvae::fig_grid_samples;
using cvae::fig_hist;
using cvae::fig_latent;
using cvae::LatentScatter;
using cvae::MetricsReport;
using cvae::read_pgm;
using cvae::Rng;
using cvae::Tensor;
using cvae::VaeParams;

namespace fs = std::filesystem;

namespace {

std::size_t count_occurrences(const std::string& text, const std::string& needle) {
  std::size_t count = 0, pos = 0;
  while ((pos = text.find(needle, pos)) != std::string::npos) {
    ++count;
    pos += needle.size();
  }
  return count;
}

std::string slurp(const fs::path& p) {
  const auto bytes = cvae::read_file_bytes(p);
  return std::string(bytes.begin(), bytes.end());
}

// Extracts attr="..." values in document order.
std::vector<std::string> attr_values(const std::string& text, const std::string& attr) {
  std::vector<std::string> out;
  const std::string needle = attr + "=\"";
  std::size_t pos = 0;
  while ((pos = text.find(needle, pos)) != std::string::npos) {
    pos += needle.size();
    const auto end = text.find('"', pos);
    out.push_back(text.substr(pos, end - pos));
    pos = end;
  }
  return out;
}

class FigureDir : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / "cvae_fig_test";
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  fs::path dir_;
};

Dataset ten_image_dataset() {
  Dataset ds;
  ds.split = "test";
  ds.images = Tensor({10, 784});
  ds.labels.resize(10);
  for (std::size_t i = 0; i < 10; ++i) {
    ds.labels[i] = static_cast<std::uint8_t>(i);
    for (std::size_t j = 0; j < 784; ++j) {
      ds.images(i, j) = ((i * 97 + j * 31) % 256) / 255.0;
    }
  }
  return ds;
}

TEST_F(FigureDir, LatentScatterHasOnePointElementPerImage) {
  Rng init(2, "init");
  const VaeParams p = VaeParams::init(784, 8, 2, init);
  const Dataset ds = ten_image_dataset();
  const LatentScatter info = fig_latent(p, ds, dir_ / "latent.svg");
  EXPECT_EQ(info.points, 10u);
  const std::string svg = slurp(dir_ / "latent.svg");
  EXPECT_EQ(count_occurrences(svg, "<circle"), 10u);
  // Bounding box attributes carry the exact data values.
  EXPECT_EQ(attr_values(svg, "data-xmin")[0], cvae::format_double(info.xmin));
  EXPECT_EQ(attr_values(svg, "data-ymax")[0], cvae::format_double(info.ymax));
}

TEST_F(FigureDir, LatentScatterIsByteDeterministic) {
  Rng init(2, "init");
  const VaeParams p = VaeParams::init(784, 8, 2, init);
  const Dataset ds = ten_image_dataset();
  fig_latent(p, ds, dir_ / "a.svg");
  fig_latent(p, ds, dir_ / "b.svg");
  EXPECT_EQ(cvae::read_file_bytes(dir_ / "a.svg"), cvae::read_file_bytes(dir_ / "b.svg"));
}

TEST_F(FigureDir, LatentScatterRejectsNon2dLatent) {
  Rng init(2, "init");
  const VaeParams p = VaeParams::init(784, 8, 3, init);
  const Dataset ds = ten_image_dataset();
  EXPECT_THROW(fig_latent(p, ds, dir_ / "latent.svg"), std::invalid_argument);
}

TEST_F(FigureDir, HistogramLinesCarryExactMetricValues) {
  std::vector<double> lls;
  for (int i = 0; i < 200; ++i) lls.push_back(-400.0 + 1.7 * i);
  const MetricsReport rep = cvae::metrics_from_log_likelihoods(lls);
  std::vector<double> log10_lls(lls.size());
  for (std::size_t i = 0; i < lls.size(); ++i) {
    log10_lls[i] = lls[i] / 2.302585092994045684;
  }
  fig_hist(log10_lls, rep, 20, dir_ / "hist.svg");
  const std::string svg = slurp(dir_ / "hist.svg");

  const auto metrics = attr_values(svg, "data-metric");
  const auto values = attr_values(svg, "data-log10");
  ASSERT_EQ(metrics.size(), 3u);
  ASSERT_EQ(values.size(), 3u);
  EXPECT_EQ(metrics[0], "robustness");
  EXPECT_EQ(values[0], cvae::format_double(rep.robustness_log10));
  EXPECT_EQ(metrics[1], "accuracy");
  EXPECT_EQ(values[1], cvae::format_double(rep.accuracy_log10));
  EXPECT_EQ(metrics[2], "decisiveness");
  EXPECT_EQ(values[2], cvae::format_double(rep.decisiveness_log10));

  // Bars conserve the sample count.
  std::size_t total = 0;
  for (const auto& c : attr_values(svg, "data-count")) total += std::stoul(c);
  EXPECT_EQ(total, lls.size());
}

TEST_F(FigureDir, AllEqualLikelihoodsOverlapTheThreeLines) {
  const std::vector<double> log10_lls(30, -42.0);
  std::vector<double> natural(30, -42.0 * 2.302585092994045684);
  const MetricsReport rep = cvae::metrics_from_log_likelihoods(natural);
  fig_hist(log10_lls, rep, 5, dir_ / "hist.svg");
  const std::string svg = slurp(dir_ / "hist.svg");
  // All three metric lines land on the same pixel column.
  std::vector<std::string> x1s;
  std::size_t pos = 0;
  while ((pos = svg.find("class=\"metric\"", pos)) != std::string::npos) {
    const auto x1pos = svg.find("x1=\"", pos) + 4;
    x1s.push_back(svg.substr(x1pos, svg.find('"', x1pos) - x1pos));
    pos += 10;
  }
  ASSERT_EQ(x1s.size(), 3u);
  EXPECT_EQ(x1s[0], x1s[1]);
  EXPECT_EQ(x1s[1], x1s[2]);
}

TEST_F(FigureDir, HistogramRejectsEmptyInput) {
  const MetricsReport rep;
  EXPECT_THROW(fig_hist(std::vector<double>{}, rep, 10, dir_ / "h.svg"),
               std::invalid_argument);
}

TEST_F(FigureDir, OriginalsGridRoundTripsPixelExact) {
  const Dataset ds = ten_image_dataset();
  fig_grid_originals(ds, 1, 1, dir_ / "grid.pgm");
  const auto img = read_pgm(dir_ / "grid.pgm");
  EXPECT_EQ(img.width, 28u);
  EXPECT_EQ(img.height, 28u);
  for (std::size_t j = 0; j < 784; ++j) {
    ASSERT_EQ(img.pixels[j], static_cast<std::uint8_t>((0 * 97 + j * 31) % 256));
  }
}

TEST_F(FigureDir, GridSeparatorsAndLayout) {
  const Dataset ds = ten_image_dataset();
  fig_grid_originals(ds, 2, 3, dir_ / "grid.pgm");
  const auto img = read_pgm(dir_ / "grid.pgm");
  EXPECT_EQ(img.width, 3u * 28u + 2u * 2u);
  EXPECT_EQ(img.height, 2u * 28u + 1u * 2u);
  // Separator rows/columns carry the fixed separator value.
  for (std::size_t x = 0; x < img.width; ++x) {
    EXPECT_EQ(img.pixels[28 * img.width + x], cvae::kGridSeparatorValue);
  }
}

TEST_F(FigureDir, ZeroWeightReconstructionsAreMidGrey) {
  const VaeParams p = VaeParams::zeros(784, 8, 2);
  const Dataset ds = ten_image_dataset();
  fig_grid_reconstructions(p, ds, 1, 2, dir_ / "grid.pgm");
  const auto img = read_pgm(dir_ / "grid.pgm");
  // Tile pixels are sigmoid(0) = 0.5 -> byte 128; separator columns excluded.
  for (std::size_t y = 0; y < 28; ++y) {
    for (std::size_t x = 0; x < 28; ++x) {
      ASSERT_EQ(img.pixels[y * img.width + x], 128);
    }
  }
}

TEST_F(FigureDir, SampleGridsDifferByNoiseDistribution) {
  Rng init(3, "init");
  const VaeParams p = VaeParams::init(784, 8, 2, init);
  fig_grid_samples(p, 0.0, 0, 2, 2, dir_ / "g0.pgm");
  fig_grid_samples(p, 0.15, 0, 2, 2, dir_ / "g15.pgm");
  fig_grid_samples(p, 0.15, 0, 2, 2, dir_ / "g15b.pgm");
  EXPECT_NE(cvae::read_file_bytes(dir_ / "g0.pgm"),
            cvae::read_file_bytes(dir_ / "g15.pgm"));
  EXPECT_EQ(cvae::read_file_bytes(dir_ / "g15.pgm"),
            cvae::read_file_bytes(dir_ / "g15b.pgm"));
}

TEST_F(FigureDir, GridRejectsInsufficientImages) {
  const Dataset ds = ten_image_dataset();
  EXPECT_THROW(fig_grid_originals(ds, 4, 4, dir_ / "grid.pgm"),
               std::invalid_argument);
}

}  // namespace
