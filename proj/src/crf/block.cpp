#include "ucrf/crf/block.hpp"

#include <cmath>
#include <random>
#include <sstream>
#include <stdexcept>

#include "ucrf/core/conv.hpp"
#include "ucrf/lattice/embedding.hpp"

namespace ucrf {

MessageSet MessageSet::parse(const std::string& text) {
  MessageSet m = none();
  if (text.empty() || text == "none") return m;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok == "ff")
      m.ff = true;
    else if (tok == "fs")
      m.fs = true;
    else if (tok == "ss")
      m.ss = true;
    else if (tok == "all")
      m = all();
    else
      throw std::invalid_argument("unknown message type '" + tok + "' (expected ff, fs, ss)");
  }
  return m;
}

std::string MessageSet::str() const {
  std::string s;
  for (auto [on, name] : {std::pair{ff, "ff"}, {fs, "fs"}, {ss, "ss"}})
    if (on) s += (s.empty() ? "" : ",") + std::string(name);
  return s.empty() ? "none" : s;
}

void CrfBlockParams::validate() const {
  const std::size_t m = inv_alpha.size();
  if (m == 0) throw std::invalid_argument("crf block: no channels");
  for (const Tensor* k : {&W, &V})
    if (k->rank() != 4 || k->dim(0) != m || k->dim(1) != m || k->dim(2) != k->dim(3) || k->dim(2) % 2 == 0)
      throw std::invalid_argument("crf block: message kernel shape " + shape_string(k->shape()) +
                                  " does not match " + std::to_string(m) + " channels");
  if (head.size() != m) throw std::invalid_argument("crf block: head size mismatch");
  if (beta1 < 0 || beta2 < 0) throw std::invalid_argument("crf block: beta must be nonnegative");
  if (!(sigma_alpha > 0 && sigma_beta > 0 && sigma_gamma > 0))
    throw std::invalid_argument("crf block: bandwidths must be positive");
  if (T < 1) throw std::invalid_argument("crf block: T must be >= 1");
}

CrfBlockParams init_block_params(std::size_t channels, std::size_t kernel, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  CrfBlockParams p;
  const double b = 1.0 / std::sqrt(static_cast<double>(channels * kernel * kernel));
  std::uniform_real_distribution<double> u(-b, b);
  p.W = Tensor({channels, channels, kernel, kernel});
  p.V = Tensor({channels, channels, kernel, kernel});
  for (double& v : p.W.data()) v = u(rng);
  for (double& v : p.V.data()) v = u(rng);
  p.inv_alpha = Tensor({channels});
  p.head = Tensor({1, channels});
  const double hb = 1.0 / std::sqrt(static_cast<double>(channels));
  std::uniform_real_distribution<double> uh(-hb, hb);
  for (double& v : p.head.data()) v = uh(rng);
  round_to_float(p.W);
  round_to_float(p.V);
  round_to_float(p.head);
  p.beta1 = round_to_float(0.1);
  p.beta2 = round_to_float(0.1);
  return p;
}

void KernelPair::cache_row_sums() {
  rows1 = k1->kernel_row_sums();
  rows2 = k2->kernel_row_sums();
}

KernelPair build_lattice_kernels(const RgbImage& img, double sigma_alpha, double sigma_beta, double sigma_gamma,
                                 const LatticeOptions& opt, double intensity_scale) {
  return {std::make_shared<PermutohedralLattice>(
              build_bilateral_features(img, sigma_alpha, sigma_beta, intensity_scale), opt),
          std::make_shared<PermutohedralLattice>(build_spatial_features(img.width(), img.height(), sigma_gamma),
                                                 opt)};
}

KernelPair build_dense_kernels(const RgbImage& img, double sigma_alpha, double sigma_beta, double sigma_gamma,
                               double intensity_scale) {
  return {std::make_shared<DenseKernel>(build_bilateral_features(img, sigma_alpha, sigma_beta, intensity_scale)),
          std::make_shared<DenseKernel>(build_spatial_features(img.width(), img.height(), sigma_gamma))};
}

namespace {

Tensor replicate(const Tensor& one, std::size_t m) {
  Tensor out = Tensor::chw(m, one.dim(1), one.dim(2));
  const std::size_t n = one.size();
  for (std::size_t c = 0; c < m; ++c) std::copy(one.data().begin(), one.data().end(), out.data().begin() + c * n);
  return out;
}

void check_same(const Tensor& a, const Tensor& b, const char* what) {
  if (!a.same_shape(b))
    throw std::invalid_argument(std::string(what) + ": shape " + shape_string(a.shape()) + " vs " +
                                shape_string(b.shape()));
}

// W and V messages at f's resolution, before the inv_alpha scale.
Tensor messages(const FeatureMap& f, const FeatureMap& h_prev, const PredictionMap& o_prev, const CrfBlockParams& p,
                Tensor* o_small_out) {
  const std::size_t m = p.channels();
  if (f.channels() != m || h_prev.channels() != m)
    throw std::invalid_argument("estimate_features: feature channels (" + std::to_string(f.channels()) + ", " +
                                std::to_string(h_prev.channels()) + ") do not match block channels " +
                                std::to_string(m));
  Tensor msg = Tensor::chw(m, f.height(), f.width());
  Tensor o_small = bilinear_resize(o_prev.values, h_prev.width(), h_prev.height());
  if (p.messages.ff) msg += bilinear_resize(conv2d(h_prev.values, p.W), f.width(), f.height());
  if (p.messages.fs) msg += bilinear_resize(conv2d(replicate(o_small, m), p.V), f.width(), f.height());
  if (o_small_out) *o_small_out = std::move(o_small);
  return msg;
}

Tensor scale_channels(const Tensor& t, const Tensor& s) {
  Tensor out = t;
  const std::size_t n = t.size() / t.dim(0);
  for (std::size_t c = 0; c < t.dim(0); ++c)
    for (std::size_t i = 0; i < n; ++i) out[c * n + i] *= s[c];
  return out;
}

Tensor head_small(const Tensor& h, const Tensor& head) {
  const std::size_t m = h.dim(0), n = h.dim(1) * h.dim(2);
  Tensor out = Tensor::chw(1, h.dim(1), h.dim(2));
  for (std::size_t c = 0; c < m; ++c) {
    const double w = head[c];
    for (std::size_t i = 0; i < n; ++i) out[i] += w * h[c * n + i];
  }
  return out;
}

struct MeanfieldTrace {
  std::vector<Tensor> mu, p1mu, p2mu;
};

// The numerator and rho share one association order so that constant inputs
// scaled by powers of two reproduce exactly.
Tensor rho_from_rows(const Tensor& r1, const Tensor& r2, double beta1, double beta2) {
  Tensor rho(r1.shape());
  const double b1 = 2.0 * beta1, b2 = 2.0 * beta2;
  for (std::size_t i = 0; i < rho.size(); ++i) rho[i] = (1.0 + b1 * r1[i]) + b2 * r2[i];
  return rho;
}

MeanfieldTrace run_meanfield(const Tensor& s_obs, const PairwiseOperator& k1, const PairwiseOperator& k2,
                             const Tensor& rho, double beta1, double beta2, int T) {
  if (T < 1) throw std::invalid_argument("meanfield: T must be >= 1");
  MeanfieldTrace tr;
  tr.mu.push_back(s_obs);
  const double b1 = 2.0 * beta1, b2 = 2.0 * beta2;
  for (int t = 1; t <= T; ++t) {
    const Tensor& prev = tr.mu.back();
    Tensor a = k1.pairwise_apply(prev);
    Tensor b = k2.pairwise_apply(prev);
    Tensor next(s_obs.shape());
    for (std::size_t i = 0; i < next.size(); ++i) next[i] = ((s_obs[i] + b1 * a[i]) + b2 * b[i]) / rho[i];
    tr.p1mu.push_back(std::move(a));
    tr.p2mu.push_back(std::move(b));
    tr.mu.push_back(std::move(next));
  }
  return tr;
}

void check_operators(const PairwiseOperator& k1, const PairwiseOperator& k2, std::size_t n) {
  if (k1.size() != n || k2.size() != n)
    throw std::invalid_argument("crf: kernel sizes (" + std::to_string(k1.size()) + ", " + std::to_string(k2.size()) +
                                ") do not match " + std::to_string(n) + " pixels");
}

// Column j of the result is op applied to the j-th unit vector.
std::vector<double> materialize(const PairwiseOperator& op) {
  const std::size_t n = op.size();
  Tensor eye({n, n});
  for (std::size_t j = 0; j < n; ++j) eye[j * n + j] = 1.0;
  Tensor cols = op.pairwise_apply(eye);  // channel j holds column j
  std::vector<double> m(n * n);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t i = 0; i < n; ++i) m[i * n + j] = cols[j * n + i];
  return m;
}

std::vector<double> solve_dense(std::vector<double> a, std::vector<double> b, std::size_t n) {
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t piv = k;
    for (std::size_t i = k + 1; i < n; ++i)
      if (std::abs(a[i * n + k]) > std::abs(a[piv * n + k])) piv = i;
    if (a[piv * n + k] == 0.0) throw std::runtime_error("fixed_point_oracle: singular system");
    if (piv != k) {
      for (std::size_t j = 0; j < n; ++j) std::swap(a[k * n + j], a[piv * n + j]);
      std::swap(b[k], b[piv]);
    }
    for (std::size_t i = k + 1; i < n; ++i) {
      const double f = a[i * n + k] / a[k * n + k];
      if (f == 0.0) continue;
      for (std::size_t j = k; j < n; ++j) a[i * n + j] -= f * a[k * n + j];
      b[i] -= f * b[k];
    }
  }
  std::vector<double> x(n);
  for (std::size_t k = n; k-- > 0;) {
    double s = b[k];
    for (std::size_t j = k + 1; j < n; ++j) s -= a[k * n + j] * x[j];
    x[k] = s / a[k * n + k];
  }
  return x;
}

}  // namespace

FeatureMap estimate_features(const FeatureMap& f, const FeatureMap& h_prev, const PredictionMap& o_prev,
                             const CrfBlockParams& p) {
  Tensor h = f.values;
  h += scale_channels(messages(f, h_prev, o_prev, p, nullptr), p.inv_alpha);
  return FeatureMap(std::move(h));
}

PredictionMap prediction_head(const FeatureMap& h, const CrfBlockParams& p, std::size_t out_h, std::size_t out_w) {
  if (h.channels() != p.head.size())
    throw std::invalid_argument("prediction_head: " + std::to_string(h.channels()) + " channels, head expects " +
                                std::to_string(p.head.size()));
  return PredictionMap(bilinear_resize(head_small(h.values, p.head), out_w, out_h));
}

PredictionMap fuse_observation(const PredictionMap& s_head, const PredictionMap& o_prev) {
  check_same(s_head.values, o_prev.values, "fuse_observation");
  PredictionMap out = s_head;
  out.values += o_prev.values;
  return out;
}

Tensor compute_rho(const PairwiseOperator& k1, const PairwiseOperator& k2, double beta1, double beta2) {
  if (k1.size() != k2.size()) throw std::invalid_argument("compute_rho: kernel size mismatch");
  return rho_from_rows(k1.kernel_row_sums(), k2.kernel_row_sums(), beta1, beta2);
}

MeanfieldResult meanfield_iterate(const PredictionMap& s_obs, const PairwiseOperator& k1, const PairwiseOperator& k2,
                                  double beta1, double beta2, int T) {
  check_operators(k1, k2, s_obs.size());
  Tensor rho = compute_rho(k1, k2, beta1, beta2);
  rho = Tensor(s_obs.values.shape(), rho.vec());
  auto tr = run_meanfield(s_obs.values, k1, k2, rho, beta1, beta2, T);
  return {PredictionMap(tr.mu.back()), std::move(tr.mu)};
}

PredictionMap fixed_point_oracle(const PredictionMap& s_obs, const PairwiseOperator& k1, const PairwiseOperator& k2,
                                 double beta1, double beta2) {
  const std::size_t n = s_obs.size();
  check_operators(k1, k2, n);
  if (n > DenseKernel::kMaxPoints)
    throw std::invalid_argument("fixed_point_oracle: " + std::to_string(n) + " pixels exceeds the " +
                                std::to_string(DenseKernel::kMaxPoints) + "-point limit");
  auto a1 = materialize(k1);
  auto a2 = materialize(k2);
  std::vector<double> a(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    double r1 = 0, r2 = 0;
    for (std::size_t j = 0; j < n; ++j) {
      r1 += a1[i * n + j];
      r2 += a2[i * n + j];
      a[i * n + j] = -2.0 * beta1 * a1[i * n + j] - 2.0 * beta2 * a2[i * n + j];
    }
    a[i * n + i] += 1.0 + 2.0 * (beta1 * r1 + beta2 * r2);
  }
  auto x = solve_dense(std::move(a), s_obs.values.vec(), n);
  return PredictionMap(Tensor(s_obs.values.shape(), std::move(x)));
}

PredictionMap fixed_point_oracle(const PredictionMap& s_obs, const EmbeddingSet& emb1, const EmbeddingSet& emb2,
                                 double beta1, double beta2) {
  return fixed_point_oracle(s_obs, DenseKernel(emb1), DenseKernel(emb2), beta1, beta2);
}

CrfBlockOutput crf_block_forward(const FeatureMap& f, const PredictionMap& s, const FeatureMap& h_prev,
                                 const PredictionMap& o_prev, const KernelPair& kernels, const CrfBlockParams& p) {
  p.validate();
  check_same(s.values, o_prev.values, "crf block: side output vs previous estimate");
  CrfBlockOutput out;
  out.msg = messages(f, h_prev, o_prev, p, &out.o_small);
  out.delta = scale_channels(out.msg, p.inv_alpha);
  Tensor h = f.values;
  h += out.delta;
  out.h = FeatureMap(std::move(h));

  PredictionMap s_head = s;
  s_head.values += bilinear_resize(head_small(out.delta, p.head), s.width(), s.height());
  out.s_obs = fuse_observation(s_head, o_prev);

  if (!p.messages.ss) {
    out.o = out.s_obs;
    out.mu_trace = {out.s_obs.values};
    return out;
  }
  check_operators(*kernels.k1, *kernels.k2, s.size());
  out.rows1 = Tensor(s.values.shape(), (kernels.rows1.empty() ? kernels.k1->kernel_row_sums() : kernels.rows1).vec());
  out.rows2 = Tensor(s.values.shape(), (kernels.rows2.empty() ? kernels.k2->kernel_row_sums() : kernels.rows2).vec());
  out.rho = rho_from_rows(out.rows1, out.rows2, p.beta1, p.beta2);
  auto tr = run_meanfield(out.s_obs.values, *kernels.k1, *kernels.k2, out.rho, p.beta1, p.beta2, p.T);
  out.o = PredictionMap(tr.mu.back());
  out.mu_trace = std::move(tr.mu);
  out.p1mu = std::move(tr.p1mu);
  out.p2mu = std::move(tr.p2mu);
  return out;
}

CrfBlockOutput crf_block_forward(const FeatureMap& f, const PredictionMap& s, const FeatureMap& h_prev,
                                 const PredictionMap& o_prev, const RgbImage& img, const CrfBlockParams& p) {
  KernelPair k;
  if (p.messages.ss) k = build_lattice_kernels(img, p.sigma_alpha, p.sigma_beta, p.sigma_gamma);
  return crf_block_forward(f, s, h_prev, o_prev, k, p);
}

CrfBlockGrads::CrfBlockGrads(const CrfBlockParams& p)
    : W(p.W.shape()), V(p.V.shape()), inv_alpha(p.inv_alpha.shape()), head(p.head.shape()) {}

CrfBlockGrads crf_block_backward(const CrfBlockOutput& out, const PredictionMap& grad_o, const Tensor& grad_h,
                                 const FeatureMap& f, const FeatureMap& h_prev, const PredictionMap& o_prev,
                                 const KernelPair& kernels, const CrfBlockParams& p) {
  if (out.mu_trace.empty()) throw std::invalid_argument("crf_block_backward: missing forward trace");
  check_same(grad_o.values, out.o.values, "crf_block_backward: grad_o");
  if (!grad_h.empty()) check_same(grad_h, f.values, "crf_block_backward: grad_h");
  CrfBlockGrads g(p);
  const std::size_t m = p.channels();

  // Mean-field, unrolled in reverse.
  Tensor g_sobs;
  if (!p.messages.ss) {
    g_sobs = grad_o.values;
  } else {
    const int T = static_cast<int>(out.mu_trace.size()) - 1;
    if (out.p1mu.size() != static_cast<std::size_t>(T)) throw std::invalid_argument("crf_block_backward: bad trace");
    const std::size_t n = grad_o.size();
    g_sobs = Tensor(grad_o.values.shape());
    Tensor g_rho(grad_o.values.shape());
    Tensor gt = grad_o.values;
    for (int t = T; t >= 1; --t) {
      const Tensor& mu = out.mu_trace[static_cast<std::size_t>(t)];
      Tensor a(gt.shape());
      for (std::size_t i = 0; i < n; ++i) {
        a[i] = gt[i] / out.rho[i];
        g_rho[i] -= gt[i] * mu[i] / out.rho[i];
      }
      g_sobs += a;
      g.beta1 += 2.0 * dot(a, out.p1mu[static_cast<std::size_t>(t - 1)]);
      g.beta2 += 2.0 * dot(a, out.p2mu[static_cast<std::size_t>(t - 1)]);
      Tensor b1 = kernels.k1->pairwise_apply(a);
      Tensor b2 = kernels.k2->pairwise_apply(a);
      for (std::size_t i = 0; i < n; ++i) gt[i] = 2.0 * p.beta1 * b1[i] + 2.0 * p.beta2 * b2[i];
    }
    g_sobs += gt;
    g.beta1 += 2.0 * dot(g_rho, out.rows1);
    g.beta2 += 2.0 * dot(g_rho, out.rows2);
  }

  // s_obs = s + up(head . delta) + o_prev
  g.s = g_sobs;
  g.o_prev = g_sobs;
  const Tensor g_small = bilinear_resize_adjoint(g_sobs, f.width(), f.height());
  const std::size_t n = f.height() * f.width();
  Tensor g_delta = grad_h.empty() ? Tensor(f.values.shape()) : grad_h;
  for (std::size_t c = 0; c < m; ++c) {
    double gh = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      gh += g_small[i] * out.delta[c * n + i];
      g_delta[c * n + i] += p.head[c] * g_small[i];
    }
    g.head[c] = gh;
  }
  g.f = grad_h.empty() ? Tensor(f.values.shape()) : grad_h;

  // delta = inv_alpha * msg
  Tensor g_msg(f.values.shape());
  for (std::size_t c = 0; c < m; ++c) {
    double ga = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      ga += g_delta[c * n + i] * out.msg[c * n + i];
      g_msg[c * n + i] = p.inv_alpha[c] * g_delta[c * n + i];
    }
    g.inv_alpha[c] = ga;
  }

  g.h_prev = Tensor(h_prev.values.shape());
  if (p.messages.ff || p.messages.fs) {
    const Tensor g_conv = bilinear_resize_adjoint(g_msg, h_prev.width(), h_prev.height());
    if (p.messages.ff) conv2d_backward(h_prev.values, p.W, g_conv, &g.h_prev, &g.W);
    if (p.messages.fs) {
      Tensor g_rep(g_conv.shape());
      conv2d_backward(replicate(out.o_small, m), p.V, g_conv, &g_rep, &g.V);
      Tensor g_os = Tensor::chw(1, h_prev.height(), h_prev.width());
      const std::size_t ns = g_os.size();
      for (std::size_t c = 0; c < m; ++c)
        for (std::size_t i = 0; i < ns; ++i) g_os[i] += g_rep[c * ns + i];
      g.o_prev += bilinear_resize_adjoint(g_os, o_prev.width(), o_prev.height());
    }
  }
  return g;
}

}  // namespace ucrf
