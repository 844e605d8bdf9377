#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "ucrf/core/maps.hpp"

namespace ucrf {

/// Per-pixel embedding vectors, already divided by their kernel bandwidths,
/// so that the kernel between pixels i and j is exp(-|v_i - v_j|^2 / 2).
struct EmbeddingSet {
  std::size_t n_points = 0;
  std::size_t dim = 0;
  std::vector<double> vectors;  // n_points x dim, row-major

  std::span<const double> point(std::size_t i) const {
    return std::span<const double>(vectors).subspan(i * dim, dim);
  }
  double squared_distance(std::size_t i, std::size_t j) const;
};

/// Appearance kernel features (x/sa, y/sa, r/sb, g/sb, b/sb), with colours
/// multiplied by intensity_scale first (255 reads sigma_beta in 8-bit units).
EmbeddingSet build_bilateral_features(const RgbImage& img, double sigma_alpha, double sigma_beta,
                                      double intensity_scale = 1.0);

/// Proximity kernel features (x/sg, y/sg).
EmbeddingSet build_spatial_features(std::size_t width, std::size_t height, double sigma_gamma);

/// Kernel amplitudes and learnable weights of the prediction-level pairwise term.
struct KernelWeights {
  double beta1 = 0.1;
  double beta2 = 0.1;
  double nu1 = 1.0;
  double nu2 = 1.0;
};

}  // namespace ucrf
