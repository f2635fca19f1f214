#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <new>
#include <stdexcept>
#include <utility>
#include <vector>

namespace cvae {

// 64-byte-aligned allocator. Keeping every tensor buffer on the same
// alignment pins Eigen's kernels to one code path regardless of where the
// allocation landed, which keeps reductions bit-reproducible run to run.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::size_t kAlign = 64;

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) {}

  T* allocate(std::size_t n) {
    return static_cast<T*>(::operator new(n * sizeof(T), std::align_val_t(kAlign)));
  }
  void deallocate(T* p, std::size_t) {
    ::operator delete(p, std::align_val_t(kAlign));
  }
  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const {
    return true;
  }
  template <typename U>
  bool operator!=(const AlignedAllocator<U>&) const {
    return false;
  }
};

using AlignedDoubles = std::vector<double, AlignedAllocator<double>>;

// Dense row-major n-dimensional array of doubles. The unit of all numerics.
struct Tensor {
  std::vector<std::size_t> shape;
  AlignedDoubles data;

  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> s)
      : shape(std::move(s)), data(count(shape), 0.0) {}

  Tensor(std::vector<std::size_t> s, const std::vector<double>& d)
      : shape(std::move(s)), data(d.begin(), d.end()) {
    if (count(shape) != data.size()) {
      throw std::invalid_argument("Tensor: shape does not match data length");
    }
  }

  static std::size_t count(const std::vector<std::size_t>& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
  }

  static Tensor zeros(std::vector<std::size_t> s) { return Tensor(std::move(s)); }

  static Tensor full(std::vector<std::size_t> s, double v) {
    Tensor t(std::move(s));
    std::fill(t.data.begin(), t.data.end(), v);
    return t;
  }

  static Tensor scalar(double v) { return Tensor({1, 1}, {v}); }

  std::size_t size() const { return data.size(); }

  // 2-d accessors; rows()/cols() treat a 1-d tensor as a single row.
  std::size_t rows() const { return shape.size() < 2 ? 1 : shape[0]; }
  std::size_t cols() const {
    if (shape.empty()) return 0;
    return shape.size() < 2 ? shape[0] : shape[1];
  }

  double& operator()(std::size_t i, std::size_t j) { return data[i * cols() + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data[i * cols() + j]; }
  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  bool all_finite() const {
    for (double v : data) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }
};

}  // namespace cvae
