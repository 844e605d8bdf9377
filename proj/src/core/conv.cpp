#include "ucrf/core/conv.hpp"

#include <algorithm>
#include <stdexcept>

namespace ucrf {

namespace {

struct ConvShape {
  std::size_t c, h, w, o, k;
};

ConvShape check_conv(const Tensor& x, const Tensor& w) {
  if (x.rank() != 3) throw std::invalid_argument("conv2d: input must be (C, H, W), got " + shape_string(x.shape()));
  if (w.rank() != 4 || w.dim(2) != w.dim(3) || w.dim(2) % 2 == 0)
    throw std::invalid_argument("conv2d: weights must be (O, C, k, k) with odd k, got " + shape_string(w.shape()));
  if (w.dim(1) != x.dim(0))
    throw std::invalid_argument("conv2d: " + std::to_string(x.dim(0)) + " input channels, weights expect " +
                                std::to_string(w.dim(1)));
  return {x.dim(0), x.dim(1), x.dim(2), w.dim(0), w.dim(2)};
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor* bias) {
  const auto s = check_conv(x, w);
  if (bias && bias->size() != s.o) throw std::invalid_argument("conv2d: bias size mismatch");
  Tensor out = Tensor::chw(s.o, s.h, s.w);
  const long r = static_cast<long>(s.k / 2);
  const long H = static_cast<long>(s.h), W = static_cast<long>(s.w);
  for (std::size_t o = 0; o < s.o; ++o) {
    double* po = out.plane(o).data();
    if (bias) std::fill(po, po + s.h * s.w, (*bias)[o]);
    for (std::size_t c = 0; c < s.c; ++c) {
      const double* px = x.plane(c).data();
      for (long ky = -r; ky <= r; ++ky)
        for (long kx = -r; kx <= r; ++kx) {
          const double wt = w[((o * s.c + c) * s.k + static_cast<std::size_t>(ky + r)) * s.k +
                              static_cast<std::size_t>(kx + r)];
          if (wt == 0.0) continue;
          const long x0 = std::max(0L, -kx), x1 = std::min(W, W - kx);
          for (long y = std::max(0L, -ky); y < std::min(H, H - ky); ++y) {
            double* row = po + y * W;
            const double* src = px + (y + ky) * W + kx;
            for (long xx = x0; xx < x1; ++xx) row[xx] += wt * src[xx];
          }
        }
    }
  }
  return out;
}

void conv2d_backward(const Tensor& x, const Tensor& w, const Tensor& grad_out, Tensor* grad_x,
                     Tensor* grad_w, Tensor* grad_b) {
  const auto s = check_conv(x, w);
  if (grad_out.shape() != std::vector<std::size_t>{s.o, s.h, s.w})
    throw std::invalid_argument("conv2d_backward: gradient shape mismatch");
  if (grad_x && !grad_x->same_shape(x)) *grad_x = Tensor(x.shape());
  if (grad_w && !grad_w->same_shape(w)) *grad_w = Tensor(w.shape());
  if (grad_b && grad_b->size() != s.o) *grad_b = Tensor({s.o});
  const long r = static_cast<long>(s.k / 2);
  const long H = static_cast<long>(s.h), W = static_cast<long>(s.w);
  for (std::size_t o = 0; o < s.o; ++o) {
    const double* go = grad_out.plane(o).data();
    if (grad_b) {
      double sum = 0.0;
      for (std::size_t i = 0; i < s.h * s.w; ++i) sum += go[i];
      (*grad_b)[o] += sum;
    }
    for (std::size_t c = 0; c < s.c; ++c) {
      const double* px = x.plane(c).data();
      double* gx = grad_x ? grad_x->plane(c).data() : nullptr;
      for (long ky = -r; ky <= r; ++ky)
        for (long kx = -r; kx <= r; ++kx) {
          const std::size_t wi = ((o * s.c + c) * s.k + static_cast<std::size_t>(ky + r)) * s.k +
                                 static_cast<std::size_t>(kx + r);
          const double wt = w[wi];
          const long x0 = std::max(0L, -kx), x1 = std::min(W, W - kx);
          double gw = 0.0;
          for (long y = std::max(0L, -ky); y < std::min(H, H - ky); ++y) {
            const double* g = go + y * W;
            const double* src = px + (y + ky) * W + kx;
            if (grad_w)
              for (long xx = x0; xx < x1; ++xx) gw += g[xx] * src[xx];
            if (gx && wt != 0.0) {
              double* dst = gx + (y + ky) * W + kx;
              for (long xx = x0; xx < x1; ++xx) dst[xx] += wt * g[xx];
            }
          }
          if (grad_w) (*grad_w)[wi] += gw;
        }
    }
  }
}

Tensor avg_pool2(const Tensor& x) {
  if (x.rank() != 3) throw std::invalid_argument("avg_pool2: input must be (C, H, W)");
  const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  const std::size_t h = (H + 1) / 2, w = (W + 1) / 2;
  Tensor out = Tensor::chw(C, h, w);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t xx = 0; xx < w; ++xx) {
        double sum = 0.0;
        int n = 0;
        for (std::size_t dy = 0; dy < 2; ++dy)
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t sy = 2 * y + dy, sx = 2 * xx + dx;
            if (sy < H && sx < W) sum += x.at(c, sy, sx), ++n;
          }
        out.at(c, y, xx) = sum / n;
      }
  return out;
}

Tensor avg_pool2_backward(const Tensor& grad_out, std::size_t in_h, std::size_t in_w) {
  const std::size_t C = grad_out.dim(0), h = grad_out.dim(1), w = grad_out.dim(2);
  if (h != (in_h + 1) / 2 || w != (in_w + 1) / 2) throw std::invalid_argument("avg_pool2_backward: shape mismatch");
  Tensor g = Tensor::chw(C, in_h, in_w);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t xx = 0; xx < w; ++xx) {
        const std::size_t ny = std::min<std::size_t>(2, in_h - 2 * y), nx = std::min<std::size_t>(2, in_w - 2 * xx);
        const double v = grad_out.at(c, y, xx) / static_cast<double>(ny * nx);
        for (std::size_t dy = 0; dy < ny; ++dy)
          for (std::size_t dx = 0; dx < nx; ++dx) g.at(c, 2 * y + dy, 2 * xx + dx) += v;
      }
  return g;
}

void relu_inplace(Tensor& x) {
  for (double& v : x.data()) v = v > 0.0 ? v : 0.0;
}

void relu_backward_inplace(const Tensor& out, Tensor& grad) {
  for (std::size_t i = 0; i < grad.size(); ++i)
    if (!(out[i] > 0.0)) grad[i] = 0.0;
}

double round_to_float(double v) { return static_cast<double>(static_cast<float>(v)); }

void round_to_float(Tensor& t) {
  for (double& v : t.data()) v = round_to_float(v);
}

}  // namespace ucrf
