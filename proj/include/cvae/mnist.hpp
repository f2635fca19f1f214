#pragma once

// MNIST IDX ingestion, pixel normalization, and deterministic shuffled
// batching. Files may be plain or gzip-compressed on disk; the loader
// decompresses transparently when it sees the gzip magic bytes.
//
// IDX layout (big-endian): 4-byte magic (0x00000803 images, 0x00000801
// labels), 4-byte counts/dims, then raw unsigned bytes.

#include <zlib.h>

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cvae/rng.hpp"
#include "cvae/tensor.hpp"

namespace cvae {

struct IdxError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IdxError("cannot open file: " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return bytes;
}

inline bool is_gzip(std::span<const std::uint8_t> bytes) {
  return bytes.size() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b;
}

inline std::vector<std::uint8_t> gunzip(std::span<const std::uint8_t> in) {
  z_stream zs{};
  if (inflateInit2(&zs, 15 + 32) != Z_OK) {
    throw IdxError("gzip: inflateInit failed");
  }
  std::vector<std::uint8_t> out;
  out.resize(in.size() * 4 + 1024);
  zs.next_in = const_cast<Bytef*>(in.data());
  zs.avail_in = static_cast<uInt>(in.size());
  std::size_t written = 0;
  int ret = Z_OK;
  do {
    if (written == out.size()) out.resize(out.size() * 2);
    zs.next_out = out.data() + written;
    zs.avail_out = static_cast<uInt>(out.size() - written);
    ret = inflate(&zs, Z_NO_FLUSH);
    if (ret != Z_OK && ret != Z_STREAM_END) {
      inflateEnd(&zs);
      throw IdxError("gzip: decompression failed (zlib code " + std::to_string(ret) + ")");
    }
    written = out.size() - zs.avail_out;
  } while (ret != Z_STREAM_END);
  inflateEnd(&zs);
  out.resize(written);
  return out;
}

inline std::vector<std::uint8_t> read_file_maybe_gz(const std::filesystem::path& path) {
  std::vector<std::uint8_t> bytes = read_file_bytes(path);
  if (is_gzip(bytes)) return gunzip(bytes);
  return bytes;
}

inline std::uint32_t read_be32(const std::uint8_t* p) {
  return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) |
         (std::uint32_t(p[2]) << 8) | std::uint32_t(p[3]);
}

constexpr std::uint32_t kIdxImageMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelMagic = 0x00000801;
constexpr std::size_t kImageRows = 28;
constexpr std::size_t kImageCols = 28;
constexpr std::size_t kImagePixels = kImageRows * kImageCols;

struct RawImages {
  std::size_t count = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> pixels;  // count * rows * cols bytes
};

inline RawImages load_idx_images(const std::filesystem::path& path) {
  const auto bytes = read_file_maybe_gz(path);
  if (bytes.size() < 16) {
    throw IdxError("idx images: short read (header) in " + path.string());
  }
  const std::uint32_t magic = read_be32(bytes.data());
  if (magic != kIdxImageMagic) {
    throw IdxError("idx images: wrong magic in " + path.string());
  }
  RawImages out;
  out.count = read_be32(bytes.data() + 4);
  out.rows = read_be32(bytes.data() + 8);
  out.cols = read_be32(bytes.data() + 12);
  if (out.rows != kImageRows || out.cols != kImageCols) {
    throw IdxError("idx images: dimension mismatch (want 28x28) in " + path.string());
  }
  const std::size_t need = 16 + out.count * out.rows * out.cols;
  if (bytes.size() < need) {
    throw IdxError("idx images: short read (pixels) in " + path.string());
  }
  if (bytes.size() > need) {
    throw IdxError("idx images: trailing bytes in " + path.string());
  }
  out.pixels.assign(bytes.begin() + 16, bytes.end());
  return out;
}

inline std::vector<std::uint8_t> load_idx_labels(const std::filesystem::path& path) {
  const auto bytes = read_file_maybe_gz(path);
  if (bytes.size() < 8) {
    throw IdxError("idx labels: short read (header) in " + path.string());
  }
  const std::uint32_t magic = read_be32(bytes.data());
  if (magic != kIdxLabelMagic) {
    throw IdxError("idx labels: wrong magic in " + path.string());
  }
  const std::size_t count = read_be32(bytes.data() + 4);
  if (bytes.size() < 8 + count) {
    throw IdxError("idx labels: short read (entries) in " + path.string());
  }
  if (bytes.size() > 8 + count) {
    throw IdxError("idx labels: trailing bytes in " + path.string());
  }
  std::vector<std::uint8_t> labels(bytes.begin() + 8, bytes.end());
  for (std::uint8_t l : labels) {
    if (l > 9) throw IdxError("idx labels: label out of range 0..9 in " + path.string());
  }
  return labels;
}

// x = byte / 255 exactly; no binarization.
inline Tensor normalize(const RawImages& raw) {
  Tensor t({raw.count, raw.rows * raw.cols});
  for (std::size_t i = 0; i < t.size(); ++i) {
    t.data[i] = static_cast<double>(raw.pixels[i]) / 255.0;
  }
  return t;
}

inline std::uint8_t pixel_to_byte(double x) {
  const long b = std::lround(x * 255.0);
  return static_cast<std::uint8_t>(b < 0 ? 0 : (b > 255 ? 255 : b));
}

struct Dataset {
  Tensor images;  // N x 784, entries in [0,1]
  std::vector<std::uint8_t> labels;
  std::string split;  // "train" or "test"

  std::size_t size() const { return labels.size(); }
};

// Resolves `name` or `name.gz` under `dir`.
inline std::filesystem::path resolve_idx_path(const std::filesystem::path& dir,
                                              const std::string& name) {
  const auto plain = dir / name;
  if (std::filesystem::exists(plain)) return plain;
  const auto gz = dir / (name + ".gz");
  if (std::filesystem::exists(gz)) return gz;
  throw IdxError("dataset file not found: " + plain.string() + " (or .gz)");
}

// split is "train" or "test"; limit = 0 keeps everything, otherwise the
// first `limit` examples are kept.
inline Dataset load_dataset(const std::filesystem::path& dir, const std::string& split,
                            std::size_t limit = 0) {
  const bool train = split == "train";
  if (!train && split != "test") {
    throw std::invalid_argument("load_dataset: split must be 'train' or 'test'");
  }
  const std::string img_name = train ? "train-images-idx3-ubyte" : "t10k-images-idx3-ubyte";
  const std::string lbl_name = train ? "train-labels-idx1-ubyte" : "t10k-labels-idx1-ubyte";
  RawImages raw = load_idx_images(resolve_idx_path(dir, img_name));
  std::vector<std::uint8_t> labels = load_idx_labels(resolve_idx_path(dir, lbl_name));
  if (raw.count != labels.size()) {
    throw IdxError("dataset: image count does not match label count in " + dir.string());
  }
  if (limit > 0 && limit < raw.count) {
    raw.count = limit;
    raw.pixels.resize(limit * kImagePixels);
    labels.resize(limit);
  }
  Dataset ds;
  ds.images = normalize(raw);
  ds.labels = std::move(labels);
  ds.split = split;
  return ds;
}

// One epoch's shuffled batch schedule. The permutation is regenerated per
// epoch from (run seed, epoch index); the last batch may be short.
struct BatchPlan {
  std::size_t batch_size = 0;
  std::uint64_t seed = 0;
  std::uint64_t epoch = 0;
  std::vector<std::size_t> order;

  static BatchPlan make(std::size_t n, std::size_t batch_size, std::uint64_t seed,
                        std::uint64_t epoch) {
    if (batch_size == 0) throw std::invalid_argument("BatchPlan: batch_size must be > 0");
    if (n == 0) throw std::invalid_argument("BatchPlan: empty dataset");
    BatchPlan plan;
    plan.batch_size = batch_size;
    plan.seed = seed;
    plan.epoch = epoch;
    plan.order.resize(n);
    for (std::size_t i = 0; i < n; ++i) plan.order[i] = i;
    Rng rng(seed, "shuffle", epoch);
    for (std::size_t i = n - 1; i > 0; --i) {
      const std::size_t j = static_cast<std::size_t>(rng.below(i + 1));
      std::swap(plan.order[i], plan.order[j]);
    }
    return plan;
  }

  std::size_t batch_count() const {
    return (order.size() + batch_size - 1) / batch_size;
  }

  std::span<const std::size_t> batch(std::size_t k) const {
    const std::size_t lo = k * batch_size;
    const std::size_t hi = std::min(lo + batch_size, order.size());
    if (lo >= hi) throw std::invalid_argument("BatchPlan: batch index out of range");
    return {plan_data() + lo, hi - lo};
  }

 private:
  const std::size_t* plan_data() const { return order.data(); }
};

// Gathers the given rows of a dataset into a dense batch tensor.
inline Tensor gather_rows(const Tensor& images, std::span<const std::size_t> indices) {
  const std::size_t d = images.cols();
  Tensor out({indices.size(), d});
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const double* src = images.data.data() + indices[r] * d;
    std::copy(src, src + d, out.data.begin() + r * d);
  }
  return out;
}

}  // namespace cvae
