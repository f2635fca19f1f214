#include "cvae/mnist.hpp"

#include <gtest/gtest.h>
#include <zlib.h>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <vector>

using cvae::BatchPlan;
using cvae::IdxError;
using cvae::load_idx_images;
using cvae::load_idx_labels;
using cvae::normalize;
using cvae::RawImages;

namespace fs = std::filesystem;

namespace {

class IdxFixture : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / "cvae_idx_test";
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  static void put_be32(std::vector<std::uint8_t>& v, std::uint32_t x) {
    v.push_back((x >> 24) & 0xff);
    v.push_back((x >> 16) & 0xff);
    v.push_back((x >> 8) & 0xff);
    v.push_back(x & 0xff);
  }

  static std::vector<std::uint8_t> image_file_bytes(std::size_t count) {
    std::vector<std::uint8_t> v;
    put_be32(v, 0x00000803);
    put_be32(v, static_cast<std::uint32_t>(count));
    put_be32(v, 28);
    put_be32(v, 28);
    for (std::size_t i = 0; i < count * 784; ++i) {
      v.push_back(static_cast<std::uint8_t>(i % 251));
    }
    return v;
  }

  static std::vector<std::uint8_t> label_file_bytes(std::vector<std::uint8_t> labels) {
    std::vector<std::uint8_t> v;
    put_be32(v, 0x00000801);
    put_be32(v, static_cast<std::uint32_t>(labels.size()));
    v.insert(v.end(), labels.begin(), labels.end());
    return v;
  }

  fs::path write(const std::string& name, const std::vector<std::uint8_t>& bytes) {
    const fs::path p = dir_ / name;
    std::ofstream out(p, std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    return p;
  }

  fs::path write_gz(const std::string& name, const std::vector<std::uint8_t>& bytes) {
    std::vector<std::uint8_t> compressed(compressBound(bytes.size()) + 32);
    z_stream zs{};
    deflateInit2(&zs, Z_DEFAULT_COMPRESSION, Z_DEFLATED, 15 + 16, 8,
                 Z_DEFAULT_STRATEGY);
    zs.next_in = const_cast<Bytef*>(bytes.data());
    zs.avail_in = static_cast<uInt>(bytes.size());
    zs.next_out = compressed.data();
    zs.avail_out = static_cast<uInt>(compressed.size());
    deflate(&zs, Z_FINISH);
    compressed.resize(zs.total_out);
    deflateEnd(&zs);
    return write(name, compressed);
  }

  fs::path dir_;
};

TEST_F(IdxFixture, RoundTripsACraftedImageFile) {
  const auto bytes = image_file_bytes(2);
  const RawImages raw = load_idx_images(write("img", bytes));
  EXPECT_EQ(raw.count, 2u);
  EXPECT_EQ(raw.rows, 28u);
  EXPECT_EQ(raw.cols, 28u);
  ASSERT_EQ(raw.pixels.size(), 2u * 784u);
  for (std::size_t i = 0; i < raw.pixels.size(); ++i) {
    ASSERT_EQ(raw.pixels[i], bytes[16 + i]);
  }
}

TEST_F(IdxFixture, GzipCompressedFilesLoadTransparently) {
  const auto bytes = image_file_bytes(3);
  const RawImages plain = load_idx_images(write("img", bytes));
  const RawImages gz = load_idx_images(write_gz("img.gz", bytes));
  EXPECT_EQ(plain.pixels, gz.pixels);
}

TEST_F(IdxFixture, WrongMagicIsRejected) {
  auto bytes = image_file_bytes(1);
  bytes[3] = 0x01;  // label magic passed to the image loader
  try {
    load_idx_images(write("img", bytes));
    FAIL() << "expected IdxError";
  } catch (const IdxError& e) {
    EXPECT_NE(std::string(e.what()).find("wrong magic"), std::string::npos);
  }
}

TEST_F(IdxFixture, TruncatedPixelsAreRejected) {
  auto bytes = image_file_bytes(2);
  bytes.resize(bytes.size() - 100);
  try {
    load_idx_images(write("img", bytes));
    FAIL() << "expected IdxError";
  } catch (const IdxError& e) {
    EXPECT_NE(std::string(e.what()).find("short read"), std::string::npos);
  }
}

TEST_F(IdxFixture, DimensionMismatchIsRejected) {
  std::vector<std::uint8_t> v;
  put_be32(v, 0x00000803);
  put_be32(v, 1);
  put_be32(v, 14);
  put_be32(v, 14);
  v.resize(v.size() + 14 * 14, 0);
  try {
    load_idx_images(write("img", v));
    FAIL() << "expected IdxError";
  } catch (const IdxError& e) {
    EXPECT_NE(std::string(e.what()).find("dimension mismatch"), std::string::npos);
  }
}

TEST_F(IdxFixture, LabelsRoundTrip) {
  const auto p = write("lbl", label_file_bytes({0, 5, 9}));
  EXPECT_EQ(load_idx_labels(p), (std::vector<std::uint8_t>{0, 5, 9}));
}

TEST_F(IdxFixture, LabelOutOfRangeIsRejected) {
  const auto p = write("lbl", label_file_bytes({0, 10}));
  EXPECT_THROW(load_idx_labels(p), IdxError);
}

TEST_F(IdxFixture, EmptyFileFailsHeaderParse) {
  const auto p = write("lbl", {});
  EXPECT_THROW(load_idx_labels(p), IdxError);
  EXPECT_THROW(load_idx_images(p), IdxError);
}

TEST_F(IdxFixture, MissingFileIsDistinctError) {
  EXPECT_THROW(load_idx_images(dir_ / "nope"), IdxError);
}

TEST(Normalize, ExactDivisionBy255) {
  RawImages raw;
  raw.count = 1;
  raw.rows = 28;
  raw.cols = 28;
  raw.pixels.assign(784, 0);
  raw.pixels[0] = 0;
  raw.pixels[1] = 255;
  raw.pixels[2] = 128;
  const auto t = normalize(raw);
  EXPECT_DOUBLE_EQ(t.data[0], 0.0);
  EXPECT_DOUBLE_EQ(t.data[1], 1.0);
  EXPECT_DOUBLE_EQ(t.data[2], 128.0 / 255.0);
  // Byte conversion recovers every original value exactly.
  for (int b = 0; b < 256; ++b) {
    EXPECT_EQ(cvae::pixel_to_byte(static_cast<double>(b) / 255.0), b);
  }
}

TEST(BatchPlan, CoversAllIndicesInDisjointBatches) {
  const BatchPlan plan = BatchPlan::make(6, 2, 0, 0);
  EXPECT_EQ(plan.batch_count(), 3u);
  std::vector<std::size_t> seen;
  for (std::size_t k = 0; k < plan.batch_count(); ++k) {
    const auto b = plan.batch(k);
    EXPECT_EQ(b.size(), 2u);
    seen.insert(seen.end(), b.begin(), b.end());
  }
  std::sort(seen.begin(), seen.end());
  EXPECT_EQ(seen, (std::vector<std::size_t>{0, 1, 2, 3, 4, 5}));
}

TEST(BatchPlan, DeterministicPerSeedAndEpoch) {
  const BatchPlan a = BatchPlan::make(100, 10, 42, 3);
  const BatchPlan b = BatchPlan::make(100, 10, 42, 3);
  EXPECT_EQ(a.order, b.order);
}

TEST(BatchPlan, DifferentEpochsPermuteDifferently) {
  const BatchPlan a = BatchPlan::make(100, 10, 42, 0);
  const BatchPlan b = BatchPlan::make(100, 10, 42, 1);
  EXPECT_NE(a.order, b.order);
}

TEST(BatchPlan, ShufflingIsABijection) {
  for (std::uint64_t epoch : {0, 1, 7}) {
    const BatchPlan plan = BatchPlan::make(997, 100, 5, epoch);
    std::vector<std::size_t> sorted = plan.order;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < sorted.size(); ++i) ASSERT_EQ(sorted[i], i);
    // short last batch allowed
    EXPECT_EQ(plan.batch(plan.batch_count() - 1).size(), 997u % 100u);
  }
}

TEST(BatchPlan, RejectsZeroBatchSize) {
  EXPECT_THROW(BatchPlan::make(10, 0, 0, 0), std::invalid_argument);
}

}  // namespace
