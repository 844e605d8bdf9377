#include "ucrf/learn/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <random>
#include <stdexcept>
#include <tuple>

#include "ucrf/cascade/cascade.hpp"
#include "ucrf/learn/backbone.hpp"

namespace ucrf {

namespace {

Tensor uniform(std::vector<std::size_t> shape, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = u(rng);
  return t;
}

// Kernels depend on the image only, so one image needs one build per bandwidth.
KernelFactory memo_factory() {
  auto cache = std::make_shared<std::map<std::tuple<double, double, double>, KernelPair>>();
  auto base = auto_kernel_factory();
  return [cache, base](const RgbImage& img, double a, double b, double g) {
    auto key = std::make_tuple(a, b, g);
    auto it = cache->find(key);
    if (it == cache->end()) it = cache->emplace(key, base(img, a, b, g)).first;
    return it->second;
  };
}

CascadeModel random_model(std::size_t L, std::size_t M, int T, std::mt19937_64& rng) {
  ScaleConfig cfg = default_scale_config(L);
  for (std::size_t l = 2; l <= L; ++l) cfg.scale(l).T = T;
  CascadeModel model(cfg, M, 3, rng());
  for (auto& b : model.blocks()) {
    b.inv_alpha = uniform({M}, rng, 0.2, 1.0);
    b.head = uniform({1, M}, rng, -1, 1);
    b.beta1 = std::uniform_real_distribution<double>(0.05, 0.3)(rng);
    b.beta2 = std::uniform_real_distribution<double>(0.05, 0.3)(rng);
  }
  return model;
}

double objective(const CascadeTrace& tr, const std::vector<Tensor>& up) {
  double acc = 0;
  for (std::size_t l = 0; l < up.size(); ++l)
    if (up[l].size()) acc += dot(up[l], tr.o[l].values);
  return acc;
}

// Central differences of an O(100) objective carry about 1e-9 of rounding
// noise, so smaller gradients are compared absolutely.
constexpr double kFloor = 1e-4;

class Checker {
 public:
  Checker(std::function<double()> f, double step) : f_(std::move(f)), step_(step) {}

  void check(const std::string& name, double* values, const double* analytic, std::size_t n,
             GradcheckReport& rep) const {
    GradcheckEntry e{name, n, 0.0};
    for (std::size_t i = 0; i < n; ++i) {
      const double keep = values[i];
      values[i] = keep + step_;
      const double fp = f_();
      values[i] = keep - step_;
      const double fm = f_();
      values[i] = keep;
      const double num = (fp - fm) / (2 * step_);
      const double den = std::max({std::abs(num), std::abs(analytic[i]), kFloor});
      e.max_rel = std::max(e.max_rel, std::abs(num - analytic[i]) / den);
    }
    rep.entries.push_back(std::move(e));
  }
  void check(const std::string& name, Tensor& t, const Tensor& g, GradcheckReport& rep) const {
    if (!t.same_shape(g)) throw std::logic_error("gradcheck: gradient shape for " + name);
    check(name, t.data().data(), g.data().data(), t.size(), rep);
  }

 private:
  std::function<double()> f_;
  double step_;
};

void check_blocks(const Checker& c, CascadeModel& model, const CascadeGrads& g, GradcheckReport& rep,
                  const std::string& prefix = {}) {
  for (std::size_t l = 2; l <= model.scale_count(); ++l) {
    auto& b = model.block(l);
    const auto& gb = g.blocks[l - 2];
    const std::string p = prefix + "block" + std::to_string(l) + ".";
    c.check(p + "W", b.W, gb.W, rep);
    c.check(p + "V", b.V, gb.V, rep);
    c.check(p + "inv_alpha", b.inv_alpha, gb.inv_alpha, rep);
    c.check(p + "head", b.head, gb.head, rep);
    c.check(p + "beta1", &b.beta1, &gb.beta1, 1, rep);
    c.check(p + "beta2", &b.beta2, &gb.beta2, 1, rep);
  }
}

}  // namespace

double GradcheckReport::max_rel() const {
  double m = 0;
  for (const auto& e : entries) m = std::max(m, e.max_rel);
  return m;
}

GradcheckReport run_gradcheck(const GradcheckOptions& opt) {
  if (opt.size < 2 || opt.channels == 0 || opt.scales < 2 || opt.T < 0 || !(opt.step > 0))
    throw std::invalid_argument("gradcheck: bad options");
  std::mt19937_64 rng(opt.seed);
  GradcheckReport rep;
  const std::size_t L = opt.scales, M = opt.channels, n = opt.size;

  // Cascade alone on random side outputs.
  {
    const RgbImage img(uniform({3, n, n}, rng, 0, 1));
    CascadeInputs in;
    for (std::size_t l = 1; l <= L; ++l) {
      std::size_t side = n;
      for (std::size_t k = 0; k < L - l + 1; ++k) side = (side + 1) / 2;
      in.f.emplace_back(uniform({M, side, side}, rng, -1, 1));
      in.s.emplace_back(uniform({1, n, n}, rng, -2, 2));
    }
    CascadeModel model = random_model(L, M, opt.T, rng);
    std::vector<Tensor> up;
    for (std::size_t l = 0; l < L; ++l) up.push_back(uniform({1, n, n}, rng, -1, 1));
    const KernelFactory kf = memo_factory();
    const auto tr = cascade_forward(in, img, model, kf);
    const CascadeGrads g = cascade_backward(tr, up, in, model);
    const Checker c([&] { return objective(cascade_forward(in, img, model, kf), up); }, opt.step);
    check_blocks(c, model, g, rep);
    for (std::size_t l = 0; l < L; ++l) {
      c.check("input.f" + std::to_string(l + 1), in.f[l].values, g.f[l], rep);
      c.check("input.s" + std::to_string(l + 1), in.s[l].values, g.s[l], rep);
    }
  }

  // Backbone feeding the five-scale cascade.
  if (opt.backbone) {
    const std::size_t b = std::max(opt.backbone_size, ToyBackbone::kMinSide);
    const RgbImage img(uniform({3, b, b}, rng, 0, 1));
    ToyBackbone net = init_backbone(M, rng());
    for (auto& cb : net.conv_b) cb = uniform(cb.shape(), rng, 0.0, 0.2);
    for (auto& hb : net.head_b) hb = uniform(hb.shape(), rng, -0.5, 0.5);
    CascadeModel model = random_model(ToyBackbone::kStages, M, opt.T, rng);
    std::vector<Tensor> up(ToyBackbone::kStages);
    up.back() = uniform({1, b, b}, rng, -1, 1);
    const KernelFactory kf = memo_factory();
    auto run = [&] {
      auto bt = backbone_forward(net, img);
      CascadeInputs in{bt.f, bt.s};
      auto ct = cascade_forward(in, img, model, kf);
      return std::make_tuple(std::move(bt), std::move(in), std::move(ct));
    };
    auto [bt, in, ct] = run();
    const CascadeGrads cg = cascade_backward(ct, up, in, model);
    ToyBackbone gn = zero_like(net);
    backbone_backward(net, bt, cg.f, cg.s, gn);
    const Checker c([&] { return objective(std::get<2>(run()), up); }, opt.step);
    for (std::size_t k = 0; k < ToyBackbone::kStages; ++k) {
      const std::string s = std::to_string(k + 1);
      c.check("backbone.conv_w" + s, net.conv_w[k], gn.conv_w[k], rep);
      c.check("backbone.conv_b" + s, net.conv_b[k], gn.conv_b[k], rep);
      c.check("backbone.head_w" + s, net.head_w[k], gn.head_w[k], rep);
      c.check("backbone.head_b" + s, net.head_b[k], gn.head_b[k], rep);
    }
    check_blocks(c, model, cg, rep, "e2e.");
  }
  return rep;
}

}  // namespace ucrf
