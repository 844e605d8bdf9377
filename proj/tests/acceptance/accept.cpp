// One line per acceptance criterion. Criteria listed with --expect-fail are
// still run and reported; they only stop counting towards the exit status.
#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <set>
#include <string>

#include "ucrf/cascade/cascade.hpp"
#include "ucrf/crf/block.hpp"
#include "ucrf/lattice/pairwise.hpp"
#include "ucrf/lattice/permutohedral.hpp"
#include "ucrf/learn/gradcheck.hpp"
#include "ucrf/learn/protocol.hpp"
#include "ucrf/metrics/metrics.hpp"

namespace fs = std::filesystem;
using namespace ucrf;
using Clock = std::chrono::steady_clock;

namespace {

double since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

RgbImage random_image(std::size_t w, std::size_t h, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0, 1);
  Tensor t({3, h, w});
  for (double& v : t.data()) v = u(rng);
  return RgbImage(std::move(t));
}

Tensor random_values(std::vector<std::size_t> shape, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = u(rng);
  return t;
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

Outcome lattice_accuracy() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(1);
  double worst[3] = {0, 0, 0};
  for (int k = 0; k < 10; ++k) {
    const RgbImage img = random_image(16, 16, rng);
    const Tensor v = random_values({256}, rng, 0, 1);
    const EmbeddingSet embs[] = {build_bilateral_features(img, 60, 5), build_spatial_features(16, 16, 3),
                                 build_spatial_features(16, 16, 10)};
    for (int r = 0; r < 3; ++r) {
      Tensor d = PermutohedralLattice(embs[r]).pairwise_apply(v);
      const Tensor ref = brute_force_pairwise(embs[r], v);
      d -= ref;
      worst[r] = std::max(worst[r], l2_norm(d) / l2_norm(ref));
    }
  }
  const double t = since(t0);
  const bool ok = *std::max_element(worst, worst + 3) <= 0.05 && t < 5;
  return {ok, fmt("worst relative L2 K1(60,5) %.2f%%, K2(3) %.2f%%, K2(10) %.2f%% (<= 5%%); %.2fs (< 5s)",
                  100 * worst[0], 100 * worst[1], 100 * worst[2], t)};
}

Outcome meanfield_fixed_point() {
  std::mt19937_64 rng(2);
  const KernelFactory kf = auto_kernel_factory();
  double worst = 0;
  bool monotone = true;
  for (int k = 0; k < 10; ++k) {
    const RgbImage img = random_image(12, 12, rng);
    const KernelPair kp = kf(img, 60, 5, 3);
    const PredictionMap s(random_values({1, 12, 12}, rng, -3, 3));
    const double b1 = k % 2 ? 0.5 : 0.1, b2 = (k / 2) % 2 ? 0.5 : 0.1;
    const auto r = meanfield_iterate(s, *kp.k1, *kp.k2, b1, b2, 50);
    worst = std::max(worst, max_abs_diff(r.mu.values, fixed_point_oracle(s, *kp.k1, *kp.k2, b1, b2).values));
    double prev = INFINITY;
    for (std::size_t t = 1; t < r.trace.size(); ++t) {
      const double step = max_abs_diff(r.trace[t], r.trace[t - 1]);
      if (step > prev * (1 + 1e-12) + 1e-15) monotone = false;
      prev = step;
    }
  }
  return {worst <= 1e-5 && monotone,
          fmt("max |mu_50 - mu*| %.3g (<= 1e-5); step residual nonincreasing: %s", worst, monotone ? "yes" : "no")};
}

Outcome identity_and_constancy() {
  std::mt19937_64 rng(3);
  const KernelFactory kf = auto_kernel_factory();
  bool identity = true, constant = true;
  for (int k = 0; k < 5; ++k) {
    const RgbImage img = random_image(12, 12, rng);
    const KernelPair kp = kf(img, 60, 5, 3);
    const PredictionMap s(random_values({1, 12, 12}, rng, -3, 3));
    for (int T : {1, 3, 10}) identity &= meanfield_iterate(s, *kp.k1, *kp.k2, 0, 0, T).mu.values == s.values;
    std::uniform_real_distribution<double> u(0, 2);
    const PredictionMap c(12, 12, std::uniform_real_distribution<double>(-4, 4)(rng));
    const auto r = meanfield_iterate(c, *kp.k1, *kp.k2, u(rng), u(rng), 10);
    constant &= max_abs_diff(r.mu.values, c.values) <= 1e-14;
  }
  return {identity && constant, fmt("beta = 0 bit-identical: %s; constant maps fixed (<= 1e-14): %s",
                                    identity ? "yes" : "no", constant ? "yes" : "no")};
}

Outcome gradient_suite() {
  const auto t0 = Clock::now();
  double worst = 0;
  std::string where;
  std::size_t checked = 0;
  for (int T : {1, 2, 3}) {
    GradcheckOptions o;
    o.T = T;
    o.seed = static_cast<std::uint64_t>(10 + T);
    for (const auto& e : run_gradcheck(o).entries) {
      checked += e.checked;
      if (e.max_rel >= worst) {
        worst = e.max_rel;
        where = e.name + fmt(" T=%d", T);
      }
    }
  }
  const double t = since(t0);
  return {worst < 1e-3 && t < 60,
          fmt("%zu entries, max relative error %.2e at %s (< 1e-3); %.1fs (< 60s)", checked, worst, where.c_str(), t)};
}

Outcome metrics_examples() {
  bool ok = true;
  const PrCurve toy = pr_curve(Gray8{2, 2, {200, 100, 50, 0}}, GroundTruthMask(2, 2, {1, 1, 0, 0}));
  ok &= toy.precision[150] == 1.0 && toy.recall[150] == 0.5;
  const double f1 = f_measure(0.8, 0.5);
  ok &= std::abs(f1 - 0.7027) <= 1e-4;
  const GroundTruthMask half(4, 2, {1, 1, 1, 1, 0, 0, 0, 0});
  const double f2 = max_f_measure(pr_curve(Gray8{4, 2, std::vector<std::uint8_t>(8, 255)}, half));
  ok &= std::abs(f2 - 0.5652) <= 1e-4;
  Gray8 perfect{4, 2, {255, 255, 255, 255, 0, 0, 0, 0}};
  ok &= max_f_measure(pr_curve(perfect, half)) == 1.0;
  PredictionMap same(2, 4), inverse(2, 4), mid(2, 4, 0.5);
  for (std::size_t i = 0; i < 8; ++i) {
    same[i] = half[i];
    inverse[i] = 1.0 - half[i];
  }
  const double m0 = mae(same, half), m1 = mae(inverse, half), m5 = mae(mid, half);
  ok &= m0 == 0.0 && m1 == 1.0 && m5 == 0.5;
  return {ok, fmt("toy P/R %.2f/%.2f; F(0.8,0.5) = %.4f; all-foreground F = %.4f; MAE %g %g %g", toy.precision[150],
                  toy.recall[150], f1, f2, m0, m1, m5)};
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

// Relative paths of every file under dir.
std::set<fs::path> tree(const fs::path& dir) {
  std::set<fs::path> out;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) out.insert(fs::relative(e.path(), dir));
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::vector<int> expect_fail, only;
  fs::path out = fs::temp_directory_path() / "ucrf_accept";
  int jobs = 1;
  app.add_option("--expect-fail", expect_fail, "Criteria reported but not counted in the exit status");
  app.add_option("--only", only, "Run only these criteria");
  app.add_option("--out", out, "Working directory for the training runs")->capture_default_str();
  app.add_option("--jobs", jobs)->capture_default_str();
  CLI11_PARSE(app, argc, argv);

  auto wanted = [&](int c) { return only.empty() || std::count(only.begin(), only.end(), c); };
  int counted_failures = 0, passed = 0, run = 0;
  auto report = [&](int c, const char* name, const Outcome& o) {
    const bool expected = std::count(expect_fail.begin(), expect_fail.end(), c) > 0;
    std::printf("[%s] %d %s: %s%s\n", o.pass ? "PASS" : "FAIL", c, name, o.detail.c_str(),
                !o.pass && expected ? " (expected failure)" : "");
    std::fflush(stdout);
    ++run;
    passed += o.pass;
    if (!o.pass && !expected) ++counted_failures;
  };

  if (wanted(1)) report(1, "lattice accuracy", lattice_accuracy());
  if (wanted(2)) report(2, "mean-field fixed point", meanfield_fixed_point());
  if (wanted(3)) report(3, "identity and constancy", identity_and_constancy());
  if (wanted(4)) report(4, "gradient suite", gradient_suite());
  if (wanted(5)) report(5, "metrics", metrics_examples());

  if (wanted(6) || wanted(7) || wanted(8)) {
    ProtocolConfig cfg;
    cfg.jobs = jobs;
    const fs::path a = out / "run1", b = out / "run2";
    fs::remove_all(out);
    auto t0 = Clock::now();
    const ProtocolResult r = run_protocol(cfg, a);
    const double t = since(t0);
    const auto& base = r.variant("baseline");
    const auto& ff = r.variant("ff");
    const auto& ss = r.variant("ss");
    const auto& full = r.variant("full");
    const auto& no_fs = r.variant("full_no_fs");
    if (wanted(6)) {
      const double tol = 0.005;
      const bool order = base.score.max_f <= ff.score.max_f + tol && base.score.max_f <= ss.score.max_f + tol &&
                         ff.score.max_f <= full.score.max_f + tol && ss.score.max_f <= full.score.max_f + tol;
      const double gain = full.score.max_f - base.score.max_f;
      report(6, "ablation on synthetic shapes",
             {gain >= 0.01 && order && t < 1800,
              fmt("max-F baseline %.4f, +ff %.4f, +ss %.4f, full %.4f; gain %.4f (>= 0.01); ordering within 0.005: "
                  "%s; %.0fs (< 1800s)",
                  base.score.max_f, ff.score.max_f, ss.score.max_f, full.score.max_f, gain, order ? "yes" : "no", t)});
    }
    if (wanted(7))
      report(7, "feature-prediction messages and training loss",
             {full.final_loss <= no_fs.final_loss,
              fmt("final smoothed stage-2 loss with f-s %.5f, without %.5f", full.final_loss, no_fs.final_loss)});
    if (wanted(8)) {
      t0 = Clock::now();
      run_protocol(cfg, b);
      const auto ta = tree(a), tb = tree(b);
      std::size_t differing = 0;
      for (const auto& p : ta)
        if (!tb.count(p) || slurp(a / p) != slurp(b / p)) ++differing;
      report(8, "reproducibility",
             {ta == tb && differing == 0,
              fmt("%zu files (checkpoints, logs, CSVs), %zu differ; rerun %.0fs", ta.size(), differing, since(t0))});
    }
  }
  std::printf("%d of %d criteria passed\n", passed, run);
  return counted_failures == 0 ? 0 : 1;
}
