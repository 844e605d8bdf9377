#include "ucrf/lattice/embedding.hpp"

#include <stdexcept>
#include <string>

namespace ucrf {

double EmbeddingSet::squared_distance(std::size_t i, std::size_t j) const {
  const double* a = vectors.data() + i * dim;
  const double* b = vectors.data() + j * dim;
  double s = 0.0;
  for (std::size_t k = 0; k < dim; ++k) {
    const double d = a[k] - b[k];
    s += d * d;
  }
  return s;
}

namespace {

void require_positive(double v, const char* name) {
  if (!(v > 0.0)) throw std::invalid_argument(std::string("bandwidth ") + name + " must be positive");
}

}  // namespace

EmbeddingSet build_bilateral_features(const RgbImage& img, double sigma_alpha, double sigma_beta,
                                      double intensity_scale) {
  require_positive(sigma_alpha, "sigma_alpha");
  require_positive(sigma_beta, "sigma_beta");
  require_positive(intensity_scale, "intensity_scale");
  const double cs = intensity_scale / sigma_beta;
  EmbeddingSet e{img.pixel_count(), 5, std::vector<double>(img.pixel_count() * 5)};
  std::size_t i = 0;
  for (std::size_t y = 0; y < img.height(); ++y)
    for (std::size_t x = 0; x < img.width(); ++x, ++i) {
      double* v = e.vectors.data() + 5 * i;
      v[0] = static_cast<double>(x) / sigma_alpha;
      v[1] = static_cast<double>(y) / sigma_alpha;
      for (std::size_t c = 0; c < 3; ++c) v[2 + c] = img.at(c, y, x) * cs;
    }
  return e;
}

EmbeddingSet build_spatial_features(std::size_t width, std::size_t height, double sigma_gamma) {
  require_positive(sigma_gamma, "sigma_gamma");
  EmbeddingSet e{width * height, 2, std::vector<double>(width * height * 2)};
  std::size_t i = 0;
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x, ++i) {
      e.vectors[2 * i] = static_cast<double>(x) / sigma_gamma;
      e.vectors[2 * i + 1] = static_cast<double>(y) / sigma_gamma;
    }
  return e;
}

}  // namespace ucrf
