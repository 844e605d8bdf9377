#include "ucrf/lattice/pairwise.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace ucrf {

std::size_t PairwiseOperator::channels_of(const Tensor& values) const {
  const std::size_t n = size();
  if (n == 0 || values.size() == 0 || values.size() % n != 0)
    throw std::invalid_argument("pairwise: value tensor of " + std::to_string(values.size()) +
                                " elements does not match " + std::to_string(n) + " points");
  return values.size() / n;
}

Tensor PairwiseOperator::gaussian_filter(const Tensor& values) const {
  Tensor out = pairwise_apply(values);
  out += values;
  return out;
}

Tensor PairwiseOperator::kernel_row_sums() const { return pairwise_apply(Tensor({size()}, 1.0)); }

DenseKernel::DenseKernel(const EmbeddingSet& emb) : n_(emb.n_points) {
  if (n_ > kMaxPoints)
    throw std::invalid_argument("dense kernel: " + std::to_string(n_) + " points exceeds the " +
                                std::to_string(kMaxPoints) + "-point limit");
  k_.assign(n_ * n_, 0.0);
  for (std::size_t i = 0; i < n_; ++i)
    for (std::size_t j = i + 1; j < n_; ++j) {
      const double w = std::exp(-0.5 * emb.squared_distance(i, j));
      k_[i * n_ + j] = w;
      k_[j * n_ + i] = w;
    }
}

Tensor DenseKernel::pairwise_apply(const Tensor& values) const {
  const std::size_t c = channels_of(values);
  Tensor out(values.shape());
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double* v = values.data().data() + ch * n_;
    double* o = out.data().data() + ch * n_;
    for (std::size_t i = 0; i < n_; ++i) {
      const double* row = k_.data() + i * n_;
      double s = 0.0;
      for (std::size_t j = 0; j < n_; ++j) s += row[j] * v[j];
      o[i] = s;
    }
  }
  return out;
}

WindowedKernel::WindowedKernel(const EmbeddingSet& emb, std::size_t width, std::size_t height, std::size_t radius)
    : n_(emb.n_points) {
  if (width * height != n_ || emb.dim < 2)
    throw std::invalid_argument("windowed kernel: embedding does not describe a " + std::to_string(width) + "x" +
                                std::to_string(height) + " pixel grid");
  const long r = static_cast<long>(radius), w = static_cast<long>(width), h = static_cast<long>(height);
  start_.reserve(n_ + 1);
  start_.push_back(0);
  for (long y = 0; y < h; ++y)
    for (long x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y * w + x);
      for (long yy = std::max(0L, y - r); yy <= std::min(h - 1, y + r); ++yy)
        for (long xx = std::max(0L, x - r); xx <= std::min(w - 1, x + r); ++xx) {
          const std::size_t j = static_cast<std::size_t>(yy * w + xx);
          if (j == i) continue;
          col_.push_back(j);
          w_.push_back(std::exp(-0.5 * emb.squared_distance(i, j)));
        }
      start_.push_back(col_.size());
    }
}

std::size_t WindowedKernel::radius_for(double spatial_sigma, double cutoff) {
  if (!(spatial_sigma > 0) || !(cutoff > 0)) throw std::invalid_argument("windowed kernel: bad bandwidth");
  return static_cast<std::size_t>(std::ceil(cutoff * spatial_sigma));
}

Tensor WindowedKernel::pairwise_apply(const Tensor& values) const {
  const std::size_t c = channels_of(values);
  Tensor out(values.shape());
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double* v = values.data().data() + ch * n_;
    double* o = out.data().data() + ch * n_;
    for (std::size_t i = 0; i < n_; ++i) {
      double s = 0.0;
      for (std::size_t k = start_[i]; k < start_[i + 1]; ++k) s += w_[k] * v[col_[k]];
      o[i] = s;
    }
  }
  return out;
}

SeparableSpatialKernel::SeparableSpatialKernel(std::size_t width, std::size_t height, double sigma)
    : w_(width), h_(height) {
  if (width == 0 || height == 0 || !(sigma > 0)) throw std::invalid_argument("spatial kernel: bad grid or bandwidth");
  g_.resize(std::max(width, height));
  for (std::size_t d = 0; d < g_.size(); ++d) {
    const double x = static_cast<double>(d) / sigma;
    g_[d] = std::exp(-0.5 * x * x);
  }
}

Tensor SeparableSpatialKernel::pairwise_apply(const Tensor& values) const {
  const std::size_t c = channels_of(values), n = size();
  Tensor out(values.shape());
  std::vector<double> tmp(n);
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double* v = values.data().data() + ch * n;
    double* o = out.data().data() + ch * n;
    for (std::size_t y = 0; y < h_; ++y)
      for (std::size_t x = 0; x < w_; ++x) {
        double s = 0.0;
        for (std::size_t xx = 0; xx < w_; ++xx) s += g_[x > xx ? x - xx : xx - x] * v[y * w_ + xx];
        tmp[y * w_ + x] = s;
      }
    for (std::size_t y = 0; y < h_; ++y)
      for (std::size_t x = 0; x < w_; ++x) {
        double s = 0.0;
        for (std::size_t yy = 0; yy < h_; ++yy) s += g_[y > yy ? y - yy : yy - y] * tmp[yy * w_ + x];
        o[y * w_ + x] = s - v[y * w_ + x];
      }
  }
  return out;
}

Tensor brute_force_pairwise(const EmbeddingSet& emb, const Tensor& values) {
  return DenseKernel(emb).pairwise_apply(values);
}

}  // namespace ucrf
