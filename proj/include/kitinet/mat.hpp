#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace kitinet {

// Row-major dense matrix, just enough linear-algebra plumbing for the
// kernels in this library.
struct Mat {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> d;

  Mat() = default;
  Mat(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), d(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return d[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return d[r * cols + c]; }

  std::span<double> row(std::size_t r) { return {d.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const {
    return {d.data() + r * cols, cols};
  }

  std::size_t size() const { return d.size(); }
};

// N x N symmetric boolean mask with false diagonal.
struct BoolMat {
  std::size_t n = 0;
  std::vector<std::uint8_t> d;

  BoolMat() = default;
  explicit BoolMat(std::size_t n_) : n(n_), d(n_ * n_, 0) {}

  bool at(std::size_t i, std::size_t j) const { return d[i * n + j] != 0; }
  void set(std::size_t i, std::size_t j, bool v) { d[i * n + j] = v ? 1 : 0; }
};

// N x N array of dim-vectors, one per ordered particle pair.
struct PairTensor {
  std::size_t n = 0;
  std::size_t dim = 0;
  std::vector<double> d;

  PairTensor() = default;
  PairTensor(std::size_t n_, std::size_t dim_) : n(n_), dim(dim_), d(n_ * n_ * dim_, 0.0) {}

  std::span<double> at(std::size_t i, std::size_t j) {
    return {d.data() + (i * n + j) * dim, dim};
  }
  std::span<const double> at(std::size_t i, std::size_t j) const {
    return {d.data() + (i * n + j) * dim, dim};
  }
};

}  // namespace kitinet
