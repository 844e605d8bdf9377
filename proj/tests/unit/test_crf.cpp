#include <doctest.h>

#include <cmath>
#include <functional>
#include <random>

#include "ucrf/crf/block.hpp"
#include "ucrf/lattice/embedding.hpp"

using namespace ucrf;

namespace {

std::mt19937 rng_for(unsigned seed) { return std::mt19937(seed); }

Tensor random_tensor(std::vector<std::size_t> shape, std::mt19937& rng, double lo = -1, double hi = 1) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = u(rng);
  return t;
}

RgbImage random_image(std::size_t w, std::size_t h, std::mt19937& rng) {
  return RgbImage(random_tensor({3, h, w}, rng, 0, 1));
}

// A pairwise operator given by an explicit matrix.
class MatrixKernel final : public PairwiseOperator {
 public:
  MatrixKernel(std::size_t n, std::vector<double> m) : n_(n), m_(std::move(m)) {}
  std::size_t size() const override { return n_; }
  Tensor pairwise_apply(const Tensor& v) const override {
    const std::size_t c = channels_of(v);
    Tensor out(v.shape());
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t i = 0; i < n_; ++i)
        for (std::size_t j = 0; j < n_; ++j) out[ch * n_ + i] += m_[i * n_ + j] * v[ch * n_ + j];
    return out;
  }

 private:
  std::size_t n_;
  std::vector<double> m_;
};

KernelPair two_pixel(double k1, double k2) {
  return {std::make_shared<MatrixKernel>(2, std::vector<double>{0, k1, k1, 0}),
          std::make_shared<MatrixKernel>(2, std::vector<double>{0, k2, k2, 0})};
}

struct Instance {
  RgbImage img;
  FeatureMap f, h_prev;
  PredictionMap s, o_prev;
  CrfBlockParams p;
  KernelPair k;
  Tensor up_o, up_h;  // random upstream gradients
};

Instance make_instance(std::size_t full, std::size_t fw, std::size_t m, int T, unsigned seed, bool dense = true) {
  auto rng = rng_for(seed);
  Instance in;
  in.img = random_image(full, full, rng);
  in.f = FeatureMap(random_tensor({m, fw, fw}, rng));
  in.h_prev = FeatureMap(random_tensor({m, (fw + 1) / 2, (fw + 1) / 2}, rng));
  in.s = PredictionMap(random_tensor({1, full, full}, rng, -2, 2));
  in.o_prev = PredictionMap(random_tensor({1, full, full}, rng, -2, 2));
  in.p = init_block_params(m, 3, seed);
  in.p.inv_alpha = random_tensor({m}, rng, 0.2, 1.0);
  in.p.beta1 = 0.05 + 0.2 * std::uniform_real_distribution<double>(0, 1)(rng);
  in.p.beta2 = 0.05 + 0.2 * std::uniform_real_distribution<double>(0, 1)(rng);
  in.p.sigma_alpha = 3;
  in.p.sigma_beta = 0.5;
  in.p.sigma_gamma = 2;
  in.p.T = T;
  in.k = dense ? build_dense_kernels(in.img, 3, 0.5, 2) : build_lattice_kernels(in.img, 3, 0.5, 2);
  in.up_o = random_tensor({1, full, full}, rng);
  in.up_h = random_tensor({m, fw, fw}, rng);
  return in;
}

double objective(const Instance& in, const CrfBlockParams& p, const FeatureMap& f, const PredictionMap& s,
                 const FeatureMap& h_prev, const PredictionMap& o_prev) {
  auto out = crf_block_forward(f, s, h_prev, o_prev, in.k, p);
  return dot(out.o.values, in.up_o) + dot(out.h.values, in.up_h);
}

double rel_err(const Tensor& a, const Tensor& b) {
  Tensor d = a;
  d -= b;
  const double scale = std::max({l2_norm(a), l2_norm(b), 1e-8});
  return l2_norm(d) / scale;
}

// Central differences of f over every entry of t.
Tensor numeric_grad(Tensor& t, const std::function<double()>& f, double h = 1e-3) {
  Tensor g(t.shape());
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double keep = t[i];
    t[i] = keep + h;
    const double fp = f();
    t[i] = keep - h;
    const double fm = f();
    t[i] = keep;
    g[i] = (fp - fm) / (2 * h);
  }
  return g;
}

void check_all_gradients(Instance in) {
  auto out = crf_block_forward(in.f, in.s, in.h_prev, in.o_prev, in.k, in.p);
  auto g = crf_block_backward(out, PredictionMap(in.up_o), in.up_h, in.f, in.h_prev, in.o_prev, in.k, in.p);

  CrfBlockParams p = in.p;
  FeatureMap f = in.f, hp = in.h_prev;
  PredictionMap s = in.s, op = in.o_prev;
  auto L = [&] { return objective(in, p, f, s, hp, op); };

  CHECK(rel_err(g.W, numeric_grad(p.W, L)) < 1e-3);
  CHECK(rel_err(g.V, numeric_grad(p.V, L)) < 1e-3);
  CHECK(rel_err(g.inv_alpha, numeric_grad(p.inv_alpha, L)) < 1e-3);
  CHECK(rel_err(g.head, numeric_grad(p.head, L)) < 1e-3);
  CHECK(rel_err(g.f, numeric_grad(f.values, L)) < 1e-3);
  CHECK(rel_err(g.s, numeric_grad(s.values, L)) < 1e-3);
  CHECK(rel_err(g.h_prev, numeric_grad(hp.values, L)) < 1e-3);
  CHECK(rel_err(g.o_prev, numeric_grad(op.values, L)) < 1e-3);

  Tensor betas({2});
  betas[0] = p.beta1;
  betas[1] = p.beta2;
  auto Lb = [&] {
    p.beta1 = betas[0];
    p.beta2 = betas[1];
    return L();
  };
  Tensor nb = numeric_grad(betas, Lb);
  Tensor ab({2});
  ab[0] = g.beta1;
  ab[1] = g.beta2;
  CHECK(rel_err(ab, nb) < 1e-3);
}

}  // namespace

TEST_CASE("message sets parse") {
  CHECK(MessageSet::parse("ff,ss") == MessageSet{true, false, true});
  CHECK(MessageSet::parse("none") == MessageSet::none());
  CHECK(MessageSet::parse("all") == MessageSet::all());
  CHECK(MessageSet::parse("fs").str() == "fs");
  CHECK_THROWS(MessageSet::parse("xy"));
}

TEST_CASE("estimate_features without messages is the identity") {
  auto in = make_instance(8, 8, 4, 1, 1);
  CrfBlockParams p = in.p;
  p.W.fill(0);
  p.V.fill(0);
  CHECK(estimate_features(in.f, in.h_prev, in.o_prev, p).values == in.f.values);
  p = in.p;
  p.inv_alpha.fill(0);
  CHECK(estimate_features(in.f, in.h_prev, in.o_prev, p).values == in.f.values);
}

TEST_CASE("estimate_features single pixel by hand") {
  CrfBlockParams p = init_block_params(1, 1, 0);
  p.W.fill(0.5);
  p.V.fill(0.25);
  p.inv_alpha.fill(1.0);
  FeatureMap f(1, 1, 1, 2.0), hp(1, 1, 1, 3.0);
  PredictionMap o(1, 1, 1.0);
  CHECK(estimate_features(f, hp, o, p).values[0] == doctest::Approx(3.75));
}

TEST_CASE("estimate_features rejects channel mismatch") {
  auto in = make_instance(8, 8, 4, 1, 2);
  FeatureMap bad(3, 8, 8);
  CHECK_THROWS(estimate_features(bad, in.h_prev, in.o_prev, in.p));
}

TEST_CASE("prediction head") {
  CrfBlockParams p = init_block_params(2, 3, 0);
  p.head[0] = 0.5;
  p.head[1] = -0.25;
  FeatureMap h(2, 1, 1);
  h.values[0] = 1;
  h.values[1] = 2;
  CHECK(prediction_head(h, p, 1, 1)[0] == 0.0);
  FeatureMap c(2, 3, 3, 1.5);
  auto m = prediction_head(c, p, 6, 6);
  for (double v : m.values.data()) CHECK(v == doctest::Approx(0.375));
  p.head.fill(0);
  CHECK(max_abs(prediction_head(c, p, 6, 6).values) == 0.0);
}

TEST_CASE("fuse observation") {
  PredictionMap a(2, 2, 1.0), b(2, 2, -1.0), z(2, 2, 0.0);
  CHECK(fuse_observation(a, z).values == a.values);
  CHECK(fuse_observation(a, b)[0] == 0.0);
  auto rng = rng_for(4);
  PredictionMap x(random_tensor({1, 3, 3}, rng)), y(random_tensor({1, 3, 3}, rng));
  CHECK(fuse_observation(x, y).values == fuse_observation(y, x).values);
  CHECK_THROWS(fuse_observation(a, PredictionMap(3, 2)));
}

TEST_CASE("rho") {
  auto k = two_pixel(1.0, 0.3);
  auto rho = compute_rho(*k.k1, *k.k2, 0.5, 0.0);
  CHECK(rho[0] == 2.0);
  CHECK(rho[1] == 2.0);
  auto one = compute_rho(*k.k1, *k.k2, 0.0, 0.0);
  CHECK(one[0] == 1.0);
  auto rng = rng_for(5);
  auto img = random_image(10, 10, rng);
  auto lk = build_lattice_kernels(img, 60, 5, 3);
  const Tensor r = compute_rho(*lk.k1, *lk.k2, 0.3, 0.7);
  for (double v : r.data()) CHECK(v >= 1.0 - 1e-6);
}

TEST_CASE("mean-field two-pixel system converges to the hand solution") {
  auto k = two_pixel(1.0, 0.0);
  PredictionMap s(1, 2);
  s[0] = 1.0;
  auto r = meanfield_iterate(s, *k.k1, *k.k2, 0.5, 0.0, 60);
  CHECK(r.mu[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(r.mu[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  CHECK(r.trace.size() == 61);
  auto o = fixed_point_oracle(s, *k.k1, *k.k2, 0.5, 0.0);
  CHECK(o[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-14));
}

TEST_CASE("mean-field with zero betas is the identity") {
  auto in = make_instance(8, 8, 2, 1, 6);
  for (int T : {1, 3, 7}) {
    auto r = meanfield_iterate(in.s, *in.k.k1, *in.k.k2, 0.0, 0.0, T);
    CHECK(r.mu.values == in.s.values);
  }
}

TEST_CASE("constant observations are fixed points") {
  auto in = make_instance(9, 9, 2, 1, 7);
  for (double c : {0.5, -2.0, 4.0}) {
    PredictionMap s(9, 9, c);
    auto r = meanfield_iterate(s, *in.k.k1, *in.k.k2, 0.37, 1.3, 5);
    for (const Tensor& mu : r.trace) CHECK(mu == s.values);
  }
  PredictionMap s(9, 9, 0.3);
  auto r = meanfield_iterate(s, *in.k.k1, *in.k.k2, 0.37, 1.3, 5);
  CHECK(max_abs_diff(r.mu.values, s.values) <= 1e-15);
}

TEST_CASE("mean-field error contracts at the dominance rate") {
  struct Bw {
    double a, b, g;
  };
  for (Bw bw : {Bw{60, 5, 3}, Bw{1, 10, 10}, Bw{3, 0.5, 1}})
    for (unsigned seed = 0; seed < 4; ++seed) {
      auto rng = rng_for(50 + seed);
      auto img = random_image(12, 12, rng);
      auto emb1 = build_bilateral_features(img, bw.a, bw.b);
      auto emb2 = build_spatial_features(12, 12, bw.g);
      DenseKernel k1(emb1), k2(emb2);
      PredictionMap s(random_tensor({1, 12, 12}, rng, -3, 3));
      const double b1 = seed % 2 ? 0.5 : 0.1, b2 = seed / 2 ? 0.5 : 0.1;
      auto star = fixed_point_oracle(s, emb1, emb2, b1, b2);
      const Tensor rho = compute_rho(k1, k2, b1, b2);
      double q = 0;
      for (double r : rho.data()) q = std::max(q, (r - 1) / r);
      auto r = meanfield_iterate(s, k1, k2, b1, b2, 50);
      const double e0 = max_abs_diff(r.trace[0], star.values);
      double prev = e0, bound = e0;
      for (std::size_t t = 1; t < r.trace.size(); ++t) {
        const double e = max_abs_diff(r.trace[t], star.values);
        bound *= q;
        CHECK(e <= prev + 1e-13);
        CHECK(e <= bound + 1e-12);
        prev = e;
      }
      double lo = s[0], hi = s[0];
      for (double v : s.values.data()) lo = std::min(lo, v), hi = std::max(hi, v);
      for (double v : star.values.data()) {
        CHECK(v >= lo - 1e-6);
        CHECK(v <= hi + 1e-6);
      }
    }
}

TEST_CASE("mean-field reaches the fixed point for local kernels") {
  for (unsigned seed = 0; seed < 4; ++seed) {
    auto rng = rng_for(60 + seed);
    auto img = random_image(12, 12, rng);
    auto emb1 = build_bilateral_features(img, 1, 0.1);
    auto emb2 = build_spatial_features(12, 12, 1);
    PredictionMap s(random_tensor({1, 12, 12}, rng, -3, 3));
    const double b1 = seed % 2 ? 0.5 : 0.1, b2 = seed / 2 ? 0.5 : 0.1;
    auto r = meanfield_iterate(s, DenseKernel(emb1), DenseKernel(emb2), b1, b2, 50);
    CHECK(max_abs_diff(r.mu.values, fixed_point_oracle(s, emb1, emb2, b1, b2).values) <= 1e-5);
  }
}

TEST_CASE("mean-field on the lattice solves the lattice system") {
  auto rng = rng_for(9);
  auto img = random_image(12, 12, rng);
  auto k = build_lattice_kernels(img, 3, 0.5, 1);
  PredictionMap s(random_tensor({1, 12, 12}, rng, -3, 3));
  auto star = fixed_point_oracle(s, *k.k1, *k.k2, 0.1, 0.5);
  auto r = meanfield_iterate(s, *k.k1, *k.k2, 0.1, 0.5, 400);
  CHECK(max_abs_diff(r.mu.values, star.values) <= 1e-5);
}

TEST_CASE("oracle guards size") {
  PredictionMap s(65, 64);
  auto e = build_spatial_features(64, 65, 1);
  CHECK_THROWS(fixed_point_oracle(s, e, e, 0.1, 0.1));
}

TEST_CASE("block forward with zero parameters passes the previous estimate") {
  auto in = make_instance(8, 8, 3, 2, 10);
  CrfBlockParams p = in.p;
  p.W.fill(0);
  p.V.fill(0);
  p.inv_alpha.fill(0);
  p.head.fill(0);
  p.beta1 = p.beta2 = 0;
  PredictionMap zero(8, 8);
  auto out = crf_block_forward(in.f, zero, in.h_prev, in.o_prev, in.k, p);
  CHECK(out.h.values == in.f.values);
  CHECK(out.o.values == in.o_prev.values);
}

TEST_CASE("block forward with messages off reproduces the side output chain") {
  auto in = make_instance(8, 8, 3, 3, 11);
  CrfBlockParams p = in.p;
  p.messages = MessageSet::none();
  auto out = crf_block_forward(in.f, in.s, in.h_prev, in.o_prev, in.k, p);
  CHECK(out.h.values == in.f.values);
  Tensor expect = in.s.values;
  expect += in.o_prev.values;
  CHECK(out.o.values == expect);
}

TEST_CASE("block forward is the composition of its parts") {
  auto in = make_instance(8, 4, 3, 3, 12);
  auto out = crf_block_forward(in.f, in.s, in.h_prev, in.o_prev, in.k, in.p);
  auto h = estimate_features(in.f, in.h_prev, in.o_prev, in.p);
  CHECK(max_abs_diff(out.h.values, h.values) < 1e-14);
  FeatureMap d(h.values);
  d.values -= in.f.values;
  PredictionMap s_head = in.s;
  s_head.values += prediction_head(d, in.p, 8, 8).values;
  auto s_obs = fuse_observation(s_head, in.o_prev);
  CHECK(max_abs_diff(out.s_obs.values, s_obs.values) < 1e-12);
  auto mf = meanfield_iterate(s_obs, *in.k.k1, *in.k.k2, in.p.beta1, in.p.beta2, in.p.T);
  CHECK(max_abs_diff(out.o.values, mf.mu.values) < 1e-12);
  CHECK(out.mu_trace.size() == 4);
}

TEST_CASE("block backward: zero upstream gives zero gradients") {
  auto in = make_instance(8, 8, 2, 2, 13);
  auto out = crf_block_forward(in.f, in.s, in.h_prev, in.o_prev, in.k, in.p);
  auto g = crf_block_backward(out, PredictionMap(8, 8), Tensor(in.f.values.shape()), in.f, in.h_prev, in.o_prev,
                              in.k, in.p);
  for (const Tensor* t : {&g.W, &g.V, &g.inv_alpha, &g.head, &g.f, &g.s, &g.h_prev, &g.o_prev})
    CHECK(max_abs(*t) == 0.0);
  CHECK(g.beta1 == 0.0);
  CHECK(g.beta2 == 0.0);
}

TEST_CASE("beta gradient on the two-pixel system") {
  auto k = two_pixel(1.0, 0.4);
  CrfBlockParams p = init_block_params(1, 1, 3);
  p.inv_alpha.fill(0);
  p.beta1 = 0.5;
  p.beta2 = 0.2;
  p.T = 3;
  FeatureMap f(1, 1, 2), hp(1, 1, 1);
  PredictionMap s(1, 2), o(1, 2);
  s[0] = 1.0;
  PredictionMap up(1, 2);
  up[0] = 0.7;
  up[1] = -0.3;
  auto L = [&](double b1, double b2) {
    CrfBlockParams q = p;
    q.beta1 = b1;
    q.beta2 = b2;
    return dot(crf_block_forward(f, s, hp, o, k, q).o.values, up.values);
  };
  auto out = crf_block_forward(f, s, hp, o, k, p);
  auto g = crf_block_backward(out, up, Tensor(), f, hp, o, k, p);
  const double h = 1e-3;
  const double n1 = (L(p.beta1 + h, p.beta2) - L(p.beta1 - h, p.beta2)) / (2 * h);
  const double n2 = (L(p.beta1, p.beta2 + h) - L(p.beta1, p.beta2 - h)) / (2 * h);
  CHECK(std::abs(g.beta1 - n1) <= 1e-3 * std::abs(n1));
  CHECK(std::abs(g.beta2 - n2) <= 1e-3 * std::abs(n2));
}

TEST_CASE("block gradients match finite differences") {
  for (int T : {1, 2, 3}) {
    CAPTURE(T);
    check_all_gradients(make_instance(8, 8, 4, T, 20 + T));
    check_all_gradients(make_instance(8, 4, 4, T, 30 + T));
  }
  check_all_gradients(make_instance(8, 8, 4, 2, 35, false));
}

TEST_CASE("block gradients match finite differences with partial messages") {
  for (auto m : {MessageSet{true, false, false}, MessageSet{false, true, true}, MessageSet{true, true, false}}) {
    auto in = make_instance(8, 8, 2, 2, 40);
    in.p.messages = m;
    check_all_gradients(in);
  }
}

TEST_CASE("pairwise adjoint matches forward filtering") {
  auto rng = rng_for(77);
  auto img = random_image(10, 10, rng);
  auto k = build_lattice_kernels(img, 2, 0.3, 2);
  auto u = random_tensor({100}, rng), v = random_tensor({100}, rng);
  for (const auto& op : {k.k1, k.k2})
    CHECK(std::abs(dot(op->pairwise_apply(u), v) - dot(u, op->pairwise_apply(v))) <= 1e-10 * l2_norm(u) * l2_norm(v));
}
