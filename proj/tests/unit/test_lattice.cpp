#include <doctest.h>

#include <cmath>
#include <random>

#include "ucrf/lattice/embedding.hpp"
#include "ucrf/lattice/pairwise.hpp"
#include "ucrf/lattice/permutohedral.hpp"

using namespace ucrf;

namespace {

RgbImage random_image(std::size_t w, std::size_t h, unsigned seed) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> u(0, 1);
  RgbImage img(w, h);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) img.set(c, y, x, u(rng));
  return img;
}

Tensor random_values(std::size_t n, unsigned seed, std::size_t channels = 1, double lo = 0) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> u(lo, 1);
  Tensor t({channels, n});
  for (double& v : t.data()) v = u(rng);
  return t;
}

double relative_error(const Tensor& a, const Tensor& ref) {
  Tensor d = a;
  d -= ref;
  return l2_norm(d) / l2_norm(ref);
}

EmbeddingSet points(std::size_t dim, std::vector<double> v) {
  return EmbeddingSet{v.size() / dim, dim, std::move(v)};
}

}  // namespace

TEST_CASE("bilateral features") {
  RgbImage img(5, 5);
  img.set(0, 4, 3, 0.5);
  auto e = build_bilateral_features(img, 5.0, 0.25);
  CHECK(e.dim == 5);
  CHECK(e.n_points == 25);
  // (0,0) and (3,4) differ in red only by 0.5 / 0.25 = 2; spatial distance 1.
  const std::size_t a = 0, b = 4 * 5 + 3;
  CHECK(e.point(b)[0] == doctest::Approx(3.0 / 5.0));
  CHECK(e.point(b)[1] == doctest::Approx(4.0 / 5.0));
  CHECK(e.squared_distance(a, b) == doctest::Approx(1.0 + 4.0));

  RgbImage flat(5, 5);
  auto f = build_bilateral_features(flat, 5.0, 10.0);
  CHECK(std::exp(-0.5 * f.squared_distance(a, b)) == doctest::Approx(std::exp(-0.5)));
  CHECK(f.squared_distance(7, 7) == 0.0);

  auto wide = build_bilateral_features(flat, 60.0, 5.0);
  auto narrow = build_bilateral_features(flat, 5.0, 5.0);
  CHECK(narrow.point(1)[0] == doctest::Approx(12.0 * wide.point(1)[0]));

  CHECK_THROWS(build_bilateral_features(flat, 0.0, 5.0));
  CHECK_THROWS(build_bilateral_features(flat, 5.0, -1.0));
}

TEST_CASE("spatial features") {
  auto e = build_spatial_features(4, 3, 1.0);
  CHECK(e.dim == 2);
  CHECK(std::exp(-0.5 * e.squared_distance(0, 1)) == doctest::Approx(std::exp(-0.5)));
  auto wide = build_spatial_features(4, 3, 10.0);
  CHECK(std::exp(-0.5 * wide.squared_distance(0, 1)) == doctest::Approx(std::exp(-1.0 / 200.0)));
  CHECK_THROWS(build_spatial_features(4, 3, 0.0));
}

TEST_CASE("single point: self term only") {
  for (std::size_t d : {2u, 5u}) {
    PermutohedralLattice lat(points(d, std::vector<double>(d, 0.3)));
    Tensor v({1}, 2.5);
    CHECK(std::abs(lat.pairwise_apply(v)[0]) < 1e-12);
    CHECK(lat.gaussian_filter(v)[0] == doctest::Approx(2.5).epsilon(1e-12));
    CHECK(std::abs(lat.kernel_row_sums()[0]) < 1e-12);
  }
}

TEST_CASE("two points match the hand kernel") {
  auto e = points(2, {0.0, 0.0, 0.6, 0.8});
  const double k = std::exp(-0.5);
  PermutohedralLattice lat(e);
  Tensor v({2});
  v[0] = 1.0;
  auto out = lat.pairwise_apply(v);
  CHECK(std::abs(out[0]) < 1e-12);
  CHECK(out[1] == doctest::Approx(k).epsilon(1e-9));
  auto rows = lat.kernel_row_sums();
  CHECK(rows[0] == doctest::Approx(k).epsilon(1e-9));
  CHECK(rows[1] == doctest::Approx(k).epsilon(1e-9));

  auto dense = brute_force_pairwise(e, v);
  CHECK(dense[0] == 0.0);
  CHECK(dense[1] == doctest::Approx(k));
}

TEST_CASE("dense oracle: constant input gives row sums") {
  auto img = random_image(8, 8, 3);
  auto e = build_bilateral_features(img, 3.0, 0.3);
  DenseKernel K(e);
  Tensor c({64}, 0.7);
  auto out = K.pairwise_apply(c);
  for (std::size_t i = 0; i < 64; ++i) {
    double s = 0;
    for (std::size_t j = 0; j < 64; ++j)
      if (j != i) s += std::exp(-0.5 * e.squared_distance(i, j));
    CHECK(out[i] == doctest::Approx(0.7 * s).epsilon(1e-12));
  }
  CHECK(max_abs(K.pairwise_apply(Tensor({64}))) == 0.0);
}

TEST_CASE("dense oracle is symmetric and guarded") {
  auto e = build_spatial_features(10, 10, 2.0);
  DenseKernel K(e);
  auto u = random_values(100, 1), v = random_values(100, 2);
  CHECK(dot(u, K.pairwise_apply(v)) == doctest::Approx(dot(K.pairwise_apply(u), v)).epsilon(1e-14));
  CHECK_THROWS(DenseKernel(build_spatial_features(65, 64, 1.0)));
}

TEST_CASE("lattice is linear") {
  auto e = build_bilateral_features(random_image(12, 12, 4), 60, 5);
  PermutohedralLattice lat(e);
  auto u = random_values(144, 5), v = random_values(144, 6);
  Tensor two = v;
  two *= 2.0;
  CHECK(lat.gaussian_filter(two) == [&] { Tensor t = lat.gaussian_filter(v); t *= 2.0; return t; }());
  Tensor sum = u;
  sum += v;
  Tensor expect = lat.pairwise_apply(u);
  expect += lat.pairwise_apply(v);
  CHECK(max_abs_diff(lat.pairwise_apply(sum), expect) < 1e-12);
}

TEST_CASE("lattice operator is symmetric") {
  for (unsigned seed = 0; seed < 5; ++seed) {
    auto img = random_image(16, 16, 10 + seed);
    for (auto e : {build_bilateral_features(img, 60, 5), build_bilateral_features(img, 1, 10),
                   build_spatial_features(16, 16, 3), build_spatial_features(16, 16, 10)}) {
      PermutohedralLattice lat(e);
      auto u = random_values(256, 20 + seed), v = random_values(256, 30 + seed);
      const double lhs = dot(u, lat.pairwise_apply(v));
      const double rhs = dot(lat.pairwise_apply(u), v);
      CHECK(std::abs(lhs - rhs) <= 1e-4 * l2_norm(u) * l2_norm(v));
    }
  }
}

TEST_CASE("lattice agrees with the dense oracle") {
  struct Case {
    int kind;
    double a, b;
  };
  for (std::size_t w : {8u, 16u, 32u})
    for (Case c : {Case{1, 60, 5}, Case{1, 1, 10}, Case{1, 10, 10}, Case{2, 3, 0}, Case{2, 10, 0}})
      for (unsigned seed = 0; seed < 3; ++seed) {
        auto img = random_image(w, w, 100 + seed);
        auto e = c.kind == 1 ? build_bilateral_features(img, c.a, c.b) : build_spatial_features(w, w, c.a);
        PermutohedralLattice lat(e);
        auto v = random_values(w * w, 200 + seed, 2);
        const double err = relative_error(lat.pairwise_apply(v), brute_force_pairwise(e, v));
        CAPTURE(w);
        CAPTURE(c.a);
        CAPTURE(c.b);
        CHECK(err <= 0.05);
      }
}

TEST_CASE("lattice on zero-mean input, spatial kernels") {
  for (double sg : {3.0, 10.0})
    for (unsigned seed = 0; seed < 3; ++seed) {
      auto e = build_spatial_features(16, 16, sg);
      PermutohedralLattice lat(e);
      auto v = random_values(256, 300 + seed, 1, -1);
      CHECK(relative_error(lat.pairwise_apply(v), brute_force_pairwise(e, v)) <= 0.05);
    }
}

TEST_CASE("lattice accuracy does not depend on where the cloud sits") {
  auto img = random_image(16, 16, 7);
  auto base = build_bilateral_features(img, 60, 5);
  std::mt19937 rng(3);
  std::uniform_real_distribution<double> u(0, 25);
  auto v = random_values(256, 8);
  for (int t = 0; t < 8; ++t) {
    auto e = base;
    double off[5];
    for (double& o : off) o = u(rng);
    for (std::size_t i = 0; i < e.n_points; ++i)
      for (std::size_t k = 0; k < 5; ++k) e.vectors[i * 5 + k] += off[k];
    PermutohedralLattice lat(e);
    CHECK(relative_error(lat.pairwise_apply(v), brute_force_pairwise(e, v)) <= 0.05);
  }
}

TEST_CASE("row sums are nonnegative and equal pairwise of ones") {
  auto img = random_image(20, 14, 9);
  for (auto e : {build_bilateral_features(img, 1, 10), build_spatial_features(20, 14, 3)}) {
    PermutohedralLattice lat(e);
    auto rows = lat.kernel_row_sums();
    CHECK(rows == lat.pairwise_apply(Tensor({e.n_points}, 1.0)));
    for (double r : rows.data()) CHECK(r >= -1e-6);
  }
}

TEST_CASE("barycentric weights are a partition of unity") {
  auto e = build_bilateral_features(random_image(9, 7, 2), 2, 0.2);
  PermutohedralLattice lat(e, {1, 3, 64});
  for (std::size_t s = 0; s < 3; ++s)
    for (std::size_t i = 0; i < e.n_points; ++i) {
      auto b = lat.barycentric(i, s);
      CHECK(b.size() == 6);
      double sum = 0;
      for (double x : b) {
        CHECK(x >= 0.0);
        sum += x;
      }
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("analytic self weight matches the raw operator diagonal") {
  auto e = build_bilateral_features(random_image(5, 4, 6), 1.5, 0.4);
  PermutohedralLattice lat(e, {2, 2, 0});
  for (std::size_t i = 0; i < e.n_points; i += 3) {
    Tensor unit({e.n_points});
    unit[i] = 1.0;
    CHECK(lat.raw_filter(unit)[i] == doctest::Approx(lat.self_weights()[i]).epsilon(1e-10));
  }
}

TEST_CASE("multichannel filtering equals per-channel filtering") {
  auto e = build_spatial_features(9, 9, 2);
  PermutohedralLattice lat(e);
  auto v = random_values(81, 4, 3);
  auto all = lat.pairwise_apply(v);
  for (std::size_t c = 0; c < 3; ++c) {
    Tensor one({81});
    for (std::size_t i = 0; i < 81; ++i) one[i] = v[c * 81 + i];
    auto r = lat.pairwise_apply(one);
    for (std::size_t i = 0; i < 81; ++i) CHECK(all[c * 81 + i] == doctest::Approx(r[i]).epsilon(1e-12));
  }
}

TEST_CASE("size mismatch and bad input") {
  auto e = build_spatial_features(4, 4, 2);
  PermutohedralLattice lat(e);
  CHECK_THROWS(lat.pairwise_apply(Tensor({15})));
  CHECK_THROWS(DenseKernel(e).pairwise_apply(Tensor({17})));
  CHECK_THROWS(PermutohedralLattice(EmbeddingSet{1, 2, {0.0, std::nan("")}}));
  CHECK_THROWS(PermutohedralLattice(e, {-1, 1, 0}));
  CHECK_THROWS(PermutohedralLattice(e, {1, 0, 0}));
}

TEST_CASE("separable spatial kernel is exact") {
  for (double sg : {0.7, 3.0, 10.0}) {
    const auto emb = build_spatial_features(9, 7, sg);
    SeparableSpatialKernel k(9, 7, sg);
    const Tensor v = random_values(63, 4, 2, -1);
    const Tensor ref = brute_force_pairwise(emb, v);
    Tensor d = k.pairwise_apply(v);
    d -= ref;
    CHECK(l2_norm(d) <= 1e-12 * l2_norm(ref));
  }
  CHECK_THROWS(SeparableSpatialKernel(0, 3, 1.0));
  CHECK_THROWS(SeparableSpatialKernel(3, 3, 0.0));
}

TEST_CASE("windowed kernel matches dense for narrow bandwidths") {
  const RgbImage img = random_image(20, 16, 12);
  const auto emb = build_bilateral_features(img, 1.0, 0.3);
  WindowedKernel k(emb, 20, 16, WindowedKernel::radius_for(1.0));
  const Tensor v = random_values(320, 5);
  CHECK(relative_error(k.pairwise_apply(v), brute_force_pairwise(emb, v)) < 1e-4);

  // With the window covering the whole image it is exact.
  WindowedKernel full(emb, 20, 16, 20);
  Tensor d = full.pairwise_apply(v);
  d -= brute_force_pairwise(emb, v);
  CHECK(l2_norm(d) < 1e-12);
  CHECK(WindowedKernel::radius_for(1.0) == 4);
  CHECK_THROWS(WindowedKernel(emb, 19, 16, 3));
}
