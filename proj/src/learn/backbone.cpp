#include "ucrf/learn/backbone.hpp"

#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

#include "ucrf/core/conv.hpp"

namespace ucrf {

namespace {

constexpr std::size_t L = ToyBackbone::kStages;

// Stage index (0 = finest) feeding scale index (0 = coarsest).
std::size_t stage_of(std::size_t scale) { return L - 1 - scale; }

Tensor side_head(const Tensor& x, const Tensor& w, const Tensor& b) {
  const std::size_t m = x.dim(0), n = x.dim(1) * x.dim(2);
  Tensor out = Tensor::chw(1, x.dim(1), x.dim(2), b[0]);
  for (std::size_t c = 0; c < m; ++c)
    for (std::size_t i = 0; i < n; ++i) out[i] += w[c] * x[c * n + i];
  return out;
}

}  // namespace

ToyBackbone init_backbone(std::size_t channels, std::uint64_t seed) {
  if (channels == 0) throw std::invalid_argument("backbone: channels must be positive");
  std::mt19937_64 rng(seed);
  ToyBackbone net;
  net.channels = channels;
  for (std::size_t k = 0; k < L; ++k) {
    const std::size_t cin = k == 0 ? 3 : channels;
    const double bound = std::sqrt(6.0 / static_cast<double>(cin * 9));
    std::uniform_real_distribution<double> u(-bound, bound);
    net.conv_w[k] = Tensor({channels, cin, 3, 3});
    for (double& v : net.conv_w[k].data()) v = u(rng);
    net.conv_b[k] = Tensor({channels});
    round_to_float(net.conv_w[k]);
  }
  const double hb = 1.0 / std::sqrt(static_cast<double>(channels));
  std::uniform_real_distribution<double> uh(-hb, hb);
  for (std::size_t l = 0; l < L; ++l) {
    net.head_w[l] = Tensor({1, channels});
    for (double& v : net.head_w[l].data()) v = uh(rng);
    net.head_b[l] = Tensor({1});
    round_to_float(net.head_w[l]);
  }
  return net;
}

ToyBackbone zero_like(const ToyBackbone& net) {
  ToyBackbone z;
  z.channels = net.channels;
  for (std::size_t k = 0; k < L; ++k) {
    z.conv_w[k] = Tensor(net.conv_w[k].shape());
    z.conv_b[k] = Tensor(net.conv_b[k].shape());
    z.head_w[k] = Tensor(net.head_w[k].shape());
    z.head_b[k] = Tensor(net.head_b[k].shape());
  }
  return z;
}

BackboneTrace backbone_forward(const ToyBackbone& net, const RgbImage& img) {
  if (img.width() < ToyBackbone::kMinSide || img.height() < ToyBackbone::kMinSide)
    throw std::invalid_argument("backbone: image " + std::to_string(img.width()) + "x" +
                                std::to_string(img.height()) + " is too small to halve five times (minimum " +
                                std::to_string(ToyBackbone::kMinSide) + " per side)");
  BackboneTrace tr;
  tr.input = img.tensor();
  const Tensor* x = &tr.input;
  for (std::size_t k = 0; k < L; ++k) {
    tr.act[k] = conv2d(*x, net.conv_w[k], &net.conv_b[k]);
    relu_inplace(tr.act[k]);
    tr.pooled[k] = avg_pool2(tr.act[k]);
    x = &tr.pooled[k];
  }
  for (std::size_t l = 0; l < L; ++l) {
    const Tensor& feat = tr.pooled[stage_of(l)];
    tr.f.emplace_back(feat);
    tr.s.emplace_back(bilinear_resize(side_head(feat, net.head_w[l], net.head_b[l]), img.width(), img.height()));
  }
  return tr;
}

void backbone_backward(const ToyBackbone& net, const BackboneTrace& tr, const std::vector<Tensor>& grad_f,
                       const std::vector<Tensor>& grad_s, ToyBackbone& g) {
  if (grad_f.size() != L || grad_s.size() != L)
    throw std::invalid_argument("backbone_backward: need one gradient slot per scale");
  const std::size_t full_h = tr.input.dim(1), full_w = tr.input.dim(2);

  // Gradient on each stage output, collected from features and heads.
  std::array<Tensor, L> g_pooled;
  for (std::size_t k = 0; k < L; ++k) g_pooled[k] = Tensor(tr.pooled[k].shape());
  for (std::size_t l = 0; l < L; ++l) {
    const std::size_t k = stage_of(l);
    const Tensor& feat = tr.pooled[k];
    if (!grad_f[l].empty()) {
      if (!grad_f[l].same_shape(feat)) throw std::invalid_argument("backbone_backward: feature gradient shape");
      g_pooled[k] += grad_f[l];
    }
    if (grad_s[l].empty()) continue;
    if (grad_s[l].size() != full_h * full_w) throw std::invalid_argument("backbone_backward: prediction gradient shape");
    const std::size_t h = feat.dim(1), w = feat.dim(2), n = h * w, m = feat.dim(0);
    const Tensor gs = bilinear_resize_adjoint(Tensor({1, full_h, full_w}, grad_s[l].vec()), w, h);
    for (std::size_t i = 0; i < n; ++i) g.head_b[l][0] += gs[i];
    for (std::size_t c = 0; c < m; ++c) {
      const double wc = net.head_w[l][c];
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        acc += gs[i] * feat[c * n + i];
        g_pooled[k][c * n + i] += wc * gs[i];
      }
      g.head_w[l][c] += acc;
    }
  }

  for (std::size_t k = L; k-- > 0;) {
    Tensor ga = avg_pool2_backward(g_pooled[k], tr.act[k].dim(1), tr.act[k].dim(2));
    relu_backward_inplace(tr.act[k], ga);
    const Tensor& x = k == 0 ? tr.input : tr.pooled[k - 1];
    if (k == 0) {
      conv2d_backward(x, net.conv_w[k], ga, nullptr, &g.conv_w[k], &g.conv_b[k]);
    } else {
      Tensor gx(x.shape());
      conv2d_backward(x, net.conv_w[k], ga, &gx, &g.conv_w[k], &g.conv_b[k]);
      g_pooled[k - 1] += gx;
    }
  }
}

}  // namespace ucrf
