// Copyright 2026 The magdrop-lab Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <sstream>
#include <vector>

#include "magdrop/errors.hpp"

namespace magdrop {

using Index = Eigen::Index;
using RowMatrixXd =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Dense n-dimensional array of doubles, row-major flat storage.
/// shape[0] is the batch dimension for batched tensors.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<Index> shape)
      : shape_(std::move(shape)),
        data_(Eigen::ArrayXd::Zero(product(shape_))) {}

  Tensor(std::vector<Index> shape, Eigen::ArrayXd data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (product(shape_) != data_.size()) {
      throw StateError("Tensor: shape/data size mismatch");
    }
  }

  static Tensor from_matrix(const RowMatrixXd& m) {
    Tensor t({m.rows(), m.cols()});
    t.matrix() = m;
    return t;
  }

  const std::vector<Index>& shape() const { return shape_; }
  Index numel() const { return data_.size(); }
  bool empty() const { return data_.size() == 0; }

  Index batch() const { return shape_.empty() ? 0 : shape_[0]; }
  Index features() const {
    return shape_.empty() ? 0 : numel() / std::max<Index>(1, shape_[0]);
  }

  Eigen::ArrayXd& array() { return data_; }
  const Eigen::ArrayXd& array() const { return data_; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  double& operator[](Index i) { return data_[i]; }
  double operator[](Index i) const { return data_[i]; }

  /// batch x features matrix view over the flat storage.
  Eigen::Map<RowMatrixXd> matrix() {
    return {data_.data(), batch(), features()};
  }
  Eigen::Map<const RowMatrixXd> matrix() const {
    return {data_.data(), batch(), features()};
  }

  /// Arbitrary 2-D view (rows*cols must equal numel).
  Eigen::Map<RowMatrixXd> matrix(Index rows, Index cols) {
    if (rows * cols != numel()) {
      throw StateError("Tensor::matrix: view size mismatch");
    }
    return {data_.data(), rows, cols};
  }
  Eigen::Map<const RowMatrixXd> matrix(Index rows, Index cols) const {
    if (rows * cols != numel()) {
      throw StateError("Tensor::matrix: view size mismatch");
    }
    return {data_.data(), rows, cols};
  }

  bool same_shape(const Tensor& other) const {
    return shape_ == other.shape_;
  }

  void require_finite(const std::string& context) const {
    if (!data_.isFinite().all()) {
      throw NumericError("non-finite value in " + context);
    }
  }

  std::string shape_str() const {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < shape_.size(); ++i) {
      os << shape_[i] << (i + 1 < shape_.size() ? "," : "");
    }
    os << ")";
    return os.str();
  }

  static Index product(const std::vector<Index>& shape) {
    return std::accumulate(shape.begin(), shape.end(), Index{1},
                           std::multiplies<>());
  }

 private:
  std::vector<Index> shape_;
  Eigen::ArrayXd data_;
};

/// Per-sample L2 norms over all non-batch dimensions.
inline Eigen::VectorXd per_sample_norms(const Tensor& t) {
  return t.matrix().rowwise().norm();
}

/// Deterministic RNG stream. Uniform doubles are derived from raw 64-bit
/// output so mask sampling does not depend on libstdc++ distribution
/// internals.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed), seed_mix_(seed) {}

  std::uint64_t raw() { return engine_(); }

  /// Uniform in [0, 1) with 53 bits of precision.
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  bool bernoulli(double p) { return uniform() < p; }

  /// Box-Muller; deterministic across stdlib versions.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

  /// Unbiased integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x = engine_();
    while (x >= limit) x = engine_();
    return x % n;
  }

  /// Derive an independent child stream.
  Rng split(std::uint64_t salt) const {
    // splitmix64-style mixing of (seed, salt)
    std::uint64_t z = seed_mix_ + salt * 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return Rng(z ^ (z >> 31));
  }

  static Rng seeded(std::uint64_t seed, std::uint64_t salt) {
    return Rng(seed).split(salt);
  }

 private:
  std::mt19937_64 engine_;
  std::uint64_t seed_mix_ = 0;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

inline std::vector<Index> fisher_yates_permutation(Index n, Rng& rng) {
  std::vector<Index> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), Index{0});
  for (Index i = n - 1; i > 0; --i) {
    const auto j = static_cast<Index>(rng.below(static_cast<std::uint64_t>(i) + 1));
    std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]);
  }
  return perm;
}

}  // namespace magdrop
