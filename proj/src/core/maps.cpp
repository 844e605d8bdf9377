#include "ucrf/core/maps.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ucrf {

RgbImage::RgbImage(std::size_t width, std::size_t height)
    : width_(width), height_(height), pixels_(Tensor::chw(3, height, width)) {}

RgbImage::RgbImage(Tensor pixels) : pixels_(std::move(pixels)) {
  if (pixels_.rank() != 3 || pixels_.dim(0) != 3)
    throw std::invalid_argument("rgb image: expected (3, H, W) tensor, got " +
                                shape_string(pixels_.shape()));
  for (double v : pixels_.data())
    if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("rgb image: value outside [0,1]");
  height_ = pixels_.dim(1);
  width_ = pixels_.dim(2);
}

void RgbImage::set(std::size_t c, std::size_t y, std::size_t x, double v) {
  pixels_.at(c, y, x) = std::clamp(v, 0.0, 1.0);
}

FeatureMap::FeatureMap(Tensor t) : values(std::move(t)) {
  if (values.rank() != 3 || values.dim(0) < 1 || values.dim(1) < 1 || values.dim(2) < 1)
    throw std::invalid_argument("feature map: expected (M, H, W) with all dims >= 1, got " +
                                shape_string(values.shape()));
}

PredictionMap::PredictionMap(Tensor t) : values(std::move(t)) {
  if (values.rank() == 2) values = Tensor({1, values.dim(0), values.dim(1)}, values.vec());
  if (values.rank() != 3 || values.dim(0) != 1)
    throw std::invalid_argument("prediction map: expected (1, H, W), got " +
                                shape_string(values.shape()));
}

GroundTruthMask::GroundTruthMask(std::size_t width, std::size_t height,
                                 std::vector<std::uint8_t> values)
    : width_(width), height_(height), values_(std::move(values)) {
  if (values_.size() != width_ * height_)
    throw std::invalid_argument("mask: size does not match dimensions");
  for (auto v : values_)
    if (v > 1) throw std::invalid_argument("mask: values must be 0 or 1");
}

std::size_t GroundTruthMask::foreground_count() const {
  return static_cast<std::size_t>(std::count(values_.begin(), values_.end(), 1));
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

PredictionMap sigmoid_map(const PredictionMap& m) {
  PredictionMap out = m;
  for (double& v : out.values.data()) v = sigmoid(v);
  return out;
}

PredictionMap logit_map(const PredictionMap& p, double epsilon) {
  if (!(epsilon > 0.0 && epsilon < 0.5)) throw std::invalid_argument("logit: epsilon must be in (0, 0.5)");
  PredictionMap out = p;
  for (double& v : out.values.data()) {
    const double q = std::clamp(v, epsilon, 1.0 - epsilon);
    v = std::log(q / (1.0 - q));
  }
  return out;
}

namespace {

struct Taps {
  std::vector<std::size_t> lo, hi;
  std::vector<double> w_hi;
};

// Half-pixel-center sampling positions, clamped at the borders.
Taps make_taps(std::size_t in, std::size_t out) {
  Taps t;
  t.lo.resize(out);
  t.hi.resize(out);
  t.w_hi.resize(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t i = 0; i < out; ++i) {
    double src = (static_cast<double>(i) + 0.5) * scale - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const auto lo = static_cast<std::size_t>(std::floor(src));
    t.lo[i] = lo;
    t.hi[i] = std::min(lo + 1, in - 1);
    t.w_hi[i] = src - static_cast<double>(lo);
  }
  return t;
}

void check_spatial(const Tensor& t, const char* who) {
  if (t.rank() != 2 && t.rank() != 3)
    throw std::invalid_argument(std::string(who) + ": expected rank-2 or rank-3 tensor");
}

}  // namespace

Tensor bilinear_resize(const Tensor& t, std::size_t new_w, std::size_t new_h) {
  check_spatial(t, "bilinear_resize");
  if (new_w == 0 || new_h == 0) throw std::invalid_argument("bilinear_resize: zero target dimension");
  const bool r3 = t.rank() == 3;
  const std::size_t c = r3 ? t.dim(0) : 1;
  const std::size_t h = t.dim(r3 ? 1 : 0);
  const std::size_t w = t.dim(r3 ? 2 : 1);
  if (h == new_h && w == new_w) return t;

  const Taps tx = make_taps(w, new_w), ty = make_taps(h, new_h);
  Tensor out(r3 ? std::vector<std::size_t>{c, new_h, new_w} : std::vector<std::size_t>{new_h, new_w});
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double* src = t.data().data() + ch * h * w;
    double* dst = out.data().data() + ch * new_h * new_w;
    for (std::size_t y = 0; y < new_h; ++y) {
      const double wy = ty.w_hi[y];
      const double* r0 = src + ty.lo[y] * w;
      const double* r1 = src + ty.hi[y] * w;
      for (std::size_t x = 0; x < new_w; ++x) {
        const double wx = tx.w_hi[x];
        const double top = r0[tx.lo[x]] + wx * (r0[tx.hi[x]] - r0[tx.lo[x]]);
        const double bot = r1[tx.lo[x]] + wx * (r1[tx.hi[x]] - r1[tx.lo[x]]);
        dst[y * new_w + x] = top + wy * (bot - top);
      }
    }
  }
  return out;
}

Tensor bilinear_resize_adjoint(const Tensor& grad, std::size_t in_w, std::size_t in_h) {
  check_spatial(grad, "bilinear_resize_adjoint");
  const bool r3 = grad.rank() == 3;
  const std::size_t c = r3 ? grad.dim(0) : 1;
  const std::size_t oh = grad.dim(r3 ? 1 : 0);
  const std::size_t ow = grad.dim(r3 ? 2 : 1);
  if (oh == in_h && ow == in_w) return grad;

  const Taps tx = make_taps(in_w, ow), ty = make_taps(in_h, oh);
  Tensor out(r3 ? std::vector<std::size_t>{c, in_h, in_w} : std::vector<std::size_t>{in_h, in_w});
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double* g = grad.data().data() + ch * oh * ow;
    double* dst = out.data().data() + ch * in_h * in_w;
    for (std::size_t y = 0; y < oh; ++y) {
      const double wy = ty.w_hi[y];
      double* r0 = dst + ty.lo[y] * in_w;
      double* r1 = dst + ty.hi[y] * in_w;
      for (std::size_t x = 0; x < ow; ++x) {
        const double wx = tx.w_hi[x];
        const double v = g[y * ow + x];
        r0[tx.lo[x]] += (1 - wy) * (1 - wx) * v;
        r0[tx.hi[x]] += (1 - wy) * wx * v;
        r1[tx.lo[x]] += wy * (1 - wx) * v;
        r1[tx.hi[x]] += wy * wx * v;
      }
    }
  }
  return out;
}

Tensor hflip(const Tensor& t) {
  check_spatial(t, "hflip");
  Tensor out = t;
  const std::size_t w = t.dim(t.rank() - 1);
  const std::size_t rows = t.size() / w;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t x = 0; x < w; ++x) out[r * w + x] = t[r * w + (w - 1 - x)];
  return out;
}

RgbImage hflip(const RgbImage& img) { return RgbImage(hflip(img.tensor())); }

GroundTruthMask hflip(const GroundTruthMask& m) {
  std::vector<std::uint8_t> v(m.size());
  for (std::size_t y = 0; y < m.height(); ++y)
    for (std::size_t x = 0; x < m.width(); ++x)
      v[y * m.width() + x] = m.at(y, m.width() - 1 - x);
  return GroundTruthMask(m.width(), m.height(), std::move(v));
}

}  // namespace ucrf
