#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "ucrf/lattice/embedding.hpp"
#include "ucrf/lattice/pairwise.hpp"

namespace ucrf {

struct LatticeOptions {
  /// [1,2,1]/4 passes along each of the d+1 lattice directions; 0 picks by
  /// dimension (passes are cheap in low dimensions and sharpen the kernel).
  int blur_passes = 0;
  /// Number of lattices, each over a differently offset copy of the
  /// embedding; outputs are averaged.
  int shifts = 4;
  /// Points at which the exact kernel row sum is evaluated to calibrate the
  /// lattice gain; 0 disables calibration.
  int calibration_samples = 64;
  /// Close the vertex table under the blur stencil. Without closure, mass
  /// leaving the table is dropped and the blur runs once in each direction
  /// order with the two results averaged, which keeps the operator
  /// symmetric; far fewer vertices on sparse point clouds.
  bool closed = true;
};

/// Gaussian filtering over a sparse permutohedral lattice (splat, blur,
/// slice), unnormalized: the output approximates sum_j exp(-|v_i-v_j|^2/2) v_j.
///
/// By default the vertex table is closed under the blur stencil, so no
/// blurred mass is dropped and the composite operator S^T B S is exactly
/// symmetric. The lattice's own approximate self-weight is removed per point,
/// so pairwise_apply() has a zero diagonal and the self term of
/// gaussian_filter() is exactly 1.
class PermutohedralLattice final : public PairwiseOperator {
 public:
  static int default_blur_passes(std::size_t dim) { return dim <= 2 ? 6 : dim <= 4 ? 2 : 1; }

  explicit PermutohedralLattice(const EmbeddingSet& emb, LatticeOptions opt = {});

  std::size_t size() const override { return n_; }
  std::size_t dim() const { return d_; }
  std::size_t vertex_count() const;
  Tensor pairwise_apply(const Tensor& values) const override;

  /// Raw lattice response S^T B S v, before the self-weight correction.
  Tensor raw_filter(const Tensor& values) const;
  /// Per-point diagonal of the raw operator.
  const std::vector<double>& self_weights() const { return self_weight_; }
  /// Gain applied to the off-diagonal lattice response.
  double gain() const { return gain_; }

  /// Barycentric weights of point i in shift s (d+1 values, nonnegative, sum 1).
  std::vector<double> barycentric(std::size_t i, std::size_t s = 0) const;

 private:
  struct Grid {
    std::vector<std::int32_t> offset;   // n x (d+1) vertex indices
    std::vector<double> barycentric;    // n x (d+1)
    std::vector<std::int32_t> neighbor; // (d+1) x m x 2, -1 when absent
    std::size_t m = 0;
  };

  Grid build_grid(const EmbeddingSet& emb, const std::vector<double>& shift) const;
  void filter_grid(const Grid& g, const double* in, double* out, std::size_t channels) const;
  void blur(const Grid& g, std::vector<double>& buf, std::vector<double>& tmp, std::size_t channels,
            bool reverse) const;
  struct TraceScratch {
    std::vector<double> mass, next_mass;
    std::vector<std::int32_t> cur, next;
  };
  // Diagonal of S^T B S for one point, following blur paths through the
  // table. Both blur orders give the same value.
  double traced_self_weight(const Grid& g, std::size_t i, TraceScratch& scratch) const;

  std::size_t n_ = 0;
  std::size_t d_ = 0;
  LatticeOptions opt_;
  double inv_std_ = 0.0;
  double norm_ = 0.0;
  std::vector<double> shell_;  // blur transfer between simplex vertices k apart
  std::vector<Grid> grids_;
  std::vector<double> self_weight_;
  double gain_ = 1.0;
};

}  // namespace ucrf
