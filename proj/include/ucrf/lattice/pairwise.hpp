#pragma once

#include <cstddef>

#include "ucrf/core/tensor.hpp"
#include "ucrf/lattice/embedding.hpp"

namespace ucrf {

/// Symmetric Gaussian pairwise operator over a fixed point set:
///   (P v)_i = sum_{j != i} exp(-|v_i - v_j|^2 / 2) v_j.
///
/// Value tensors hold one or more channels of n points each; any shape whose
/// element count is a multiple of size() is accepted and channels are the
/// consecutive blocks of size() values.
class PairwiseOperator {
 public:
  virtual ~PairwiseOperator() = default;

  virtual std::size_t size() const = 0;
  virtual Tensor pairwise_apply(const Tensor& values) const = 0;

  /// Includes the self term exp(0) = 1.
  Tensor gaussian_filter(const Tensor& values) const;
  /// sum_{j != i} K_ij.
  Tensor kernel_row_sums() const;

 protected:
  std::size_t channels_of(const Tensor& values) const;
};

/// Exact O(N^2) evaluation; the reference the lattice is tested against.
class DenseKernel final : public PairwiseOperator {
 public:
  static constexpr std::size_t kMaxPoints = 4096;

  explicit DenseKernel(const EmbeddingSet& emb);

  std::size_t size() const override { return n_; }
  Tensor pairwise_apply(const Tensor& values) const override;
  double weight(std::size_t i, std::size_t j) const { return k_[i * n_ + j]; }

 private:
  std::size_t n_;
  std::vector<double> k_;  // zero diagonal
};

/// Exact sum over a square pixel window, for kernels whose spatial bandwidth
/// is a few pixels. Points are pixels of a width x height grid in row-major
/// order and the first two embedding coordinates are x/sigma and y/sigma.
/// Pairs farther apart than `radius` pixels along either axis are dropped.
class WindowedKernel final : public PairwiseOperator {
 public:
  WindowedKernel(const EmbeddingSet& emb, std::size_t width, std::size_t height, std::size_t radius);

  /// Radius at which the spatial factor falls below exp(-cutoff^2 / 2).
  static std::size_t radius_for(double spatial_sigma, double cutoff = 4.0);

  std::size_t size() const override { return n_; }
  Tensor pairwise_apply(const Tensor& values) const override;

 private:
  std::size_t n_;
  std::vector<std::size_t> start_;  // CSR rows
  std::vector<std::size_t> col_;
  std::vector<double> w_;
};

/// Exact spatial-only kernel exp(-|p_i - p_j|^2 / (2 sigma^2)) over a pixel
/// grid, applied as two full-length 1-D passes.
class SeparableSpatialKernel final : public PairwiseOperator {
 public:
  SeparableSpatialKernel(std::size_t width, std::size_t height, double sigma);

  std::size_t size() const override { return w_ * h_; }
  Tensor pairwise_apply(const Tensor& values) const override;

 private:
  std::size_t w_, h_;
  std::vector<double> g_;  // g_[d] = exp(-d^2 / (2 sigma^2)), d < max(w, h)
};

Tensor brute_force_pairwise(const EmbeddingSet& emb, const Tensor& values);

}  // namespace ucrf
