#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>

#include "ucrf/cascade/cascade.hpp"
#include "ucrf/core/conv.hpp"

using namespace ucrf;

namespace {

Tensor random_tensor(std::vector<std::size_t> shape, std::mt19937& rng, double lo = -1, double hi = 1) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = u(rng);
  return t;
}

struct Setup {
  RgbImage img;
  CascadeInputs in;
  CascadeModel model;
};

// Scale l features at size ceil(full / 2^(L-l+1)), minimum 1.
Setup make_setup(std::size_t full, std::size_t L, std::size_t m, unsigned seed) {
  std::mt19937 rng(seed);
  Setup s;
  s.img = RgbImage(random_tensor({3, full, full}, rng, 0, 1));
  for (std::size_t l = 1; l <= L; ++l) {
    std::size_t side = full;
    for (std::size_t k = 0; k < L - l + 1; ++k) side = (side + 1) / 2;
    s.in.f.emplace_back(random_tensor({m, side, side}, rng));
    s.in.s.emplace_back(random_tensor({1, full, full}, rng, -2, 2));
  }
  ScaleConfig cfg = default_scale_config(L);
  for (std::size_t l = 2; l <= L; ++l) {
    cfg.scale(l).sigma_alpha = 3;
    cfg.scale(l).sigma_beta = 0.5;
  }
  s.model = CascadeModel(cfg, m, 3, seed);
  for (auto& b : s.model.blocks()) {
    b.inv_alpha = random_tensor({m}, rng, 0.2, 1.0);
    b.beta1 = 0.15;
    b.beta2 = 0.1;
  }
  return s;
}

KernelFactory dense_factory() {
  return [](const RgbImage& img, double a, double b, double g) { return build_dense_kernels(img, a, b, g); };
}

double loss_of(const Setup& s, const Tensor& up) {
  const auto tr = cascade_forward(s.in, s.img, s.model, dense_factory());
  double acc = 0;
  for (std::size_t i = 0; i < up.size(); ++i) acc += up[i] * tr.final_map().values[i];
  return acc;
}

}  // namespace

TEST_CASE("default scale config uses the published bandwidths") {
  const ScaleConfig c = default_scale_config();
  CHECK(c.scale_count() == 5);
  for (std::size_t l = 2; l <= 4; ++l) {
    CHECK(c.scale(l).sigma_alpha == 60);
    CHECK(c.scale(l).sigma_beta == 5);
    CHECK(c.scale(l).sigma_gamma == 3);
    CHECK(c.scale(l).T == 3);
  }
  CHECK(c.scale(5).sigma_alpha == 1);
  CHECK(c.scale(5).sigma_beta == 10);
  CHECK(c.scale(5).sigma_gamma == 10);
  CHECK_THROWS(c.scale(0));
  CHECK_THROWS(c.scale(6));
  CHECK_THROWS(default_scale_config(1));
}

TEST_CASE("model has one block per scale above the first") {
  CascadeModel m(default_scale_config(), 4, 3, 1);
  CHECK(m.blocks().size() == 4);
  CHECK_THROWS(m.block(1));
  CHECK(m.block(5).sigma_alpha == 1);
  m.set_messages(MessageSet::parse("ff"));
  for (const auto& b : m.blocks()) CHECK(b.messages == MessageSet{true, false, false});
  CHECK(m.config().scale(3).messages == MessageSet{true, false, false});
}

TEST_CASE("messages off passes the previous output along the side-output chain") {
  Setup s = make_setup(12, 4, 3, 5);
  s.model.set_messages(MessageSet::none());
  const auto tr = cascade_forward(s.in, s.img, s.model, dense_factory());
  // With every message off, o^l = s^l + o^{l-1}.
  Tensor expect = s.in.s[0].values;
  for (std::size_t l = 1; l < 4; ++l) {
    expect += s.in.s[l].values;
    CHECK(tr.o[l].values == expect);
    CHECK(tr.h[l].values == s.in.f[l].values);
  }
}

TEST_CASE("forward rejects mismatched inputs") {
  Setup s = make_setup(12, 3, 2, 1);
  auto bad = s.in;
  bad.f.pop_back();
  CHECK_THROWS_AS(cascade_forward(bad, s.img, s.model, dense_factory()), std::invalid_argument);
  bad = s.in;
  bad.s[1] = PredictionMap(11, 12);
  CHECK_THROWS_AS(cascade_forward(bad, s.img, s.model, dense_factory()), std::invalid_argument);
}

TEST_CASE("end-to-end gradient matches finite differences") {
  Setup s = make_setup(8, 3, 2, 9);
  std::mt19937 rng(3);
  const Tensor up = random_tensor({1, 8, 8}, rng);
  const auto tr = cascade_forward(s.in, s.img, s.model, dense_factory());
  const auto g = cascade_backward(tr, PredictionMap(up), s.in, s.model);
  const double eps = 1e-6;

  auto check_entry = [&](double& x, double analytic) {
    const double keep = x;
    x = keep + eps;
    const double lp = loss_of(s, up);
    x = keep - eps;
    const double lm = loss_of(s, up);
    x = keep;
    const double num = (lp - lm) / (2 * eps);
    CHECK(analytic == doctest::Approx(num).epsilon(1e-5).scale(1.0));
  };
  for (std::size_t l = 2; l <= 3; ++l) {
    auto& b = s.model.block(l);
    const auto& gb = g.blocks[l - 2];
    for (std::size_t i : {0u, 7u, 17u}) check_entry(b.W[i], gb.W[i]);
    for (std::size_t i : {1u, 11u}) check_entry(b.V[i], gb.V[i]);
    check_entry(b.inv_alpha[1], gb.inv_alpha[1]);
    check_entry(b.head[0], gb.head[0]);
    check_entry(b.beta1, gb.beta1);
    check_entry(b.beta2, gb.beta2);
  }
  for (std::size_t l = 0; l < 3; ++l) {
    check_entry(s.in.f[l].values[1], g.f[l][1]);
    check_entry(s.in.s[l].values[20], g.s[l][20]);
  }
}

TEST_CASE("zero upstream gradient gives zero parameter gradients") {
  Setup s = make_setup(8, 3, 2, 4);
  const auto tr = cascade_forward(s.in, s.img, s.model, dense_factory());
  const auto g = cascade_backward(tr, PredictionMap(8, 8), s.in, s.model);
  for (const auto& gb : g.blocks) {
    for (double v : gb.W.data()) CHECK(v == 0);
    for (double v : gb.V.data()) CHECK(v == 0);
    CHECK(gb.beta1 == 0);
    CHECK(gb.beta2 == 0);
  }
}

TEST_CASE("intermediate supervision reaches earlier blocks") {
  Setup s = make_setup(8, 3, 2, 6);
  const auto tr = cascade_forward(s.in, s.img, s.model, dense_factory());
  std::vector<Tensor> go(3);
  go[1] = Tensor({1, 8, 8}, 1.0);
  const auto g = cascade_backward(tr, go, s.in, s.model);
  double n2 = 0, n3 = 0;
  for (double v : g.blocks[0].W.data()) n2 += std::abs(v);
  for (double v : g.blocks[1].W.data()) n3 += std::abs(v);
  CHECK(n2 > 0);
  CHECK(n3 == 0);
}

TEST_CASE("checkpoint round trip is bit exact") {
  Setup s = make_setup(12, 4, 3, 8);
  for (auto& b : s.model.blocks()) {
    round_to_float(b.inv_alpha);
    b.beta1 = round_to_float(b.beta1);
    b.beta2 = round_to_float(b.beta2);
  }
  ScaleConfig cfg = s.model.config();
  cfg.scale(3).messages = MessageSet::parse("fs,ss");
  cfg.scale(4).sigma_gamma = 0.1 + 0.2;
  s.model.set_config(cfg);
  const auto dir = std::filesystem::temp_directory_path() / "ucrf_test_ckpt";
  std::filesystem::remove_all(dir);
  Manifest m;
  m.set("note", "hello world");
  save_cascade(s.model, dir, m);
  m.write(dir / "manifest.txt");

  const Manifest back = Manifest::read(dir / "manifest.txt");
  CHECK(back.get("note") == "hello world");
  const CascadeModel loaded = load_cascade(dir, back, 4);
  CHECK(loaded == s.model);
  CHECK(loaded.block(4).sigma_gamma == 0.1 + 0.2);
  const auto a = cascade_forward(s.in, s.img, s.model, dense_factory());
  const auto b = cascade_forward(s.in, s.img, loaded, dense_factory());
  CHECK(a.final_map().values == b.final_map().values);

  CHECK_THROWS_WITH_AS(load_cascade(dir, back, 5), doctest::Contains("expected 5"), std::runtime_error);
  Manifest wrong = back;
  wrong.set("version", "2");
  CHECK_THROWS_AS(load_cascade(dir, wrong), std::runtime_error);
  std::filesystem::remove(dir / "block3_V.ucrf");
  CHECK_THROWS(load_cascade(dir, back));
  std::filesystem::remove_all(dir);
}

TEST_CASE("manifest parsing errors") {
  Manifest m;
  CHECK_THROWS(m.set("bad key", "x"));
  m.set("x", "12abc");
  CHECK_THROWS(m.get_int("x"));
  CHECK_THROWS(m.get_double("x"));
  CHECK_THROWS(m.get("missing"));
  m.set("y", 0.1);
  CHECK(m.get_double("y") == 0.1);
}

TEST_CASE("automatic kernel choice agrees with dense kernels") {
  // Two flat regions with mild noise, the regime the cascade works in.
  std::mt19937 rng(2);
  std::normal_distribution<double> noise(0.0, 0.01);
  RgbImage img(16, 12);
  for (std::size_t y = 0; y < 12; ++y)
    for (std::size_t x = 0; x < 16; ++x)
      for (std::size_t c = 0; c < 3; ++c) img.set(c, y, x, std::clamp((x < 7 ? 0.3 : 0.6) + 0.1 * c + noise(rng), 0.0, 1.0));
  const auto factory = auto_kernel_factory();
  const Tensor v = random_tensor({1, 12, 16}, rng, 0, 1);
  for (auto [a, b, g] : {std::tuple{60.0, 5.0, 3.0}, std::tuple{1.0, 10.0, 10.0}}) {
    const KernelPair k = factory(img, a, b, g);
    const KernelPair d = build_dense_kernels(img, a, b, g, kEightBitIntensityScale);
    for (auto [x, y] : {std::pair{k.k1, d.k1}, std::pair{k.k2, d.k2}}) {
      Tensor diff = x->pairwise_apply(v);
      const Tensor ref = y->pairwise_apply(v);
      diff -= ref;
      CHECK(l2_norm(diff) <= 0.1 * l2_norm(ref));
    }
  }
  // Spatial kernels are shared between images of the same size.
  const RgbImage other(random_tensor({3, 12, 16}, rng, 0, 1));
  CHECK(factory(img, 60, 5, 3).k2 == factory(other, 60, 5, 3).k2);
}
