#include "ucrf/lattice/permutohedral.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace ucrf {

namespace {

constexpr std::size_t kMaxVertices = std::size_t{1} << 26;

// Open-addressing table from lattice keys (the first d coordinates of a
// vertex; the last is implied by the zero-sum constraint) to dense indices.
class VertexTable {
 public:
  VertexTable(std::size_t d, std::size_t expected) : d_(d) {
    std::size_t cap = 64;
    while (cap < 2 * expected) cap <<= 1;
    slots_.assign(cap, -1);
    keys_.reserve(expected * d);
  }

  std::size_t size() const { return keys_.size() / d_; }
  const std::int32_t* key(std::size_t i) const { return keys_.data() + i * d_; }

  std::int32_t find(const std::int32_t* k) const {
    std::size_t h = hash(k) & (slots_.size() - 1);
    while (true) {
      const std::int32_t s = slots_[h];
      if (s < 0) return -1;
      if (std::equal(k, k + d_, key(static_cast<std::size_t>(s)))) return s;
      h = (h + 1) & (slots_.size() - 1);
    }
  }

  std::int32_t insert(const std::int32_t* k) {
    if (2 * (size() + 1) > slots_.size()) grow();
    std::size_t h = hash(k) & (slots_.size() - 1);
    while (true) {
      const std::int32_t s = slots_[h];
      if (s < 0) break;
      if (std::equal(k, k + d_, key(static_cast<std::size_t>(s)))) return s;
      h = (h + 1) & (slots_.size() - 1);
    }
    if (size() >= kMaxVertices) throw std::runtime_error("lattice: vertex table limit exceeded");
    const auto idx = static_cast<std::int32_t>(size());
    keys_.insert(keys_.end(), k, k + d_);
    slots_[h] = idx;
    return idx;
  }

 private:
  std::size_t hash(const std::int32_t* k) const {
    std::size_t h = 0;
    for (std::size_t i = 0; i < d_; ++i) h = (h + static_cast<std::uint32_t>(k[i])) * 2531011u;
    return h ^ (h >> 17);
  }

  void grow() {
    std::vector<std::int32_t> slots(slots_.size() * 2, -1);
    for (std::size_t i = 0; i < size(); ++i) {
      std::size_t h = hash(key(i)) & (slots.size() - 1);
      while (slots[h] >= 0) h = (h + 1) & (slots.size() - 1);
      slots[h] = static_cast<std::int32_t>(i);
    }
    slots_.swap(slots);
  }

  std::size_t d_;
  std::vector<std::int32_t> slots_;
  std::vector<std::int32_t> keys_;
};

// Step along lattice direction j: u_j = (d+1) e_j - 1 in the full d+1
// coordinates, of which the first d are stored.
void step(const std::int32_t* key, std::int32_t* out, std::size_t d, std::size_t j, int sign) {
  for (std::size_t i = 0; i < d; ++i) out[i] = key[i] - sign;
  if (j < d) out[j] = key[j] + sign * static_cast<std::int32_t>(d);
}

double binomial_weight(int passes, int m) {
  if (m < -passes || m > passes) return 0.0;
  // C(2p, p+m) / 4^p
  double c = 1.0;
  const int n = 2 * passes, k = passes + m;
  for (int i = 1; i <= k; ++i) c = c * (n - k + i) / i;
  return c / std::pow(4.0, passes);
}

// Van der Corput radical inverse, for deterministic lattice offsets.
double radical_inverse(std::size_t i, std::size_t base) {
  double f = 1.0, r = 0.0;
  while (i > 0) {
    f /= static_cast<double>(base);
    r += f * static_cast<double>(i % base);
    i /= base;
  }
  return r;
}

constexpr std::size_t kPrimes[] = {2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37};

}  // namespace

PermutohedralLattice::PermutohedralLattice(const EmbeddingSet& emb, LatticeOptions opt)
    : n_(emb.n_points), d_(emb.dim), opt_(opt) {
  if (d_ < 1) throw std::invalid_argument("lattice: embedding dimension must be >= 1");
  if (n_ < 1) throw std::invalid_argument("lattice: empty embedding set");
  if (opt_.blur_passes == 0) opt_.blur_passes = default_blur_passes(d_);
  if (opt_.blur_passes < 1 || opt_.shifts < 1) throw std::invalid_argument("lattice: bad options");
  if (emb.vectors.size() != n_ * d_) throw std::invalid_argument("lattice: embedding size mismatch");
  for (double v : emb.vectors)
    if (!std::isfinite(v)) throw std::invalid_argument("lattice: non-finite embedding value");

  const double d = static_cast<double>(d_);
  const int p = opt_.blur_passes;
  // Blur variance p/2 plus splat/slice variance 1/6, in units of (d+1)^2.
  inv_std_ = (d + 1.0) * std::sqrt(p / 2.0 + 1.0 / 6.0);
  // Lattice vertices have covolume (d+1)^(d-1/2) in elevated space; the
  // blur is mass preserving, so this maps the lattice response to an
  // unnormalized unit-variance Gaussian sum.
  norm_ = std::pow(2.0 * std::numbers::pi, d / 2.0) * std::pow(inv_std_, d) /
          std::pow(d + 1.0, d - 0.5);

  shell_.assign(d_ + 1, 0.0);
  for (std::size_t s = 0; s <= d_; ++s)
    for (int t = -p; t <= p + 1; ++t)
      shell_[s] += std::pow(binomial_weight(p, t - 1), static_cast<double>(s)) *
                   std::pow(binomial_weight(p, t), static_cast<double>(d_ + 1 - s));

  const double cell = std::sqrt(d * (d + 1.0)) / inv_std_;
  for (int s = 0; s < opt_.shifts; ++s) {
    std::vector<double> shift(d_, 0.0);
    if (s > 0)
      for (std::size_t i = 0; i < d_; ++i)
        shift[i] = cell * radical_inverse(static_cast<std::size_t>(s), kPrimes[i % std::size(kPrimes)]);
    grids_.push_back(build_grid(emb, shift));
  }

  self_weight_.assign(n_, 0.0);
  const double scale = norm_ / static_cast<double>(grids_.size());
  TraceScratch scratch;
  for (const Grid& g : grids_)
    for (std::size_t i = 0; i < n_; ++i) {
      if (!opt_.closed) {
        // u^T B u is the same for both blur orders (one is the transpose of
        // the other), so one trace covers the averaged operator.
        self_weight_[i] += scale * traced_self_weight(g, i, scratch);
        continue;
      }
      const double* b = g.barycentric.data() + i * (d_ + 1);
      double w = 0.0;
      for (std::size_t k = 0; k <= d_; ++k)
        for (std::size_t k2 = 0; k2 <= d_; ++k2)
          w += b[k] * b[k2] * shell_[k > k2 ? k - k2 : k2 - k];
      self_weight_[i] += scale * w;
    }

  if (opt_.calibration_samples > 0) {
    const std::size_t m = std::min<std::size_t>(static_cast<std::size_t>(opt_.calibration_samples), n_);
    const Tensor rows = pairwise_apply(Tensor({n_}, 1.0));
    double exact = 0.0, approx = 0.0;
    for (std::size_t k = 0; k < m; ++k) {
      const std::size_t i = (2 * k + 1) * n_ / (2 * m);
      for (std::size_t j = 0; j < n_; ++j)
        if (j != i) exact += std::exp(-0.5 * emb.squared_distance(i, j));
      approx += rows[i];
    }
    if (approx > 1e-12 && exact > 1e-12) gain_ = exact / approx;
  }
}

std::size_t PermutohedralLattice::vertex_count() const {
  std::size_t m = 0;
  for (const Grid& g : grids_) m += g.m;
  return m;
}

std::vector<double> PermutohedralLattice::barycentric(std::size_t i, std::size_t s) const {
  const Grid& g = grids_.at(s);
  const double* b = g.barycentric.data() + i * (d_ + 1);
  return std::vector<double>(b, b + d_ + 1);
}

PermutohedralLattice::Grid PermutohedralLattice::build_grid(const EmbeddingSet& emb,
                                                            const std::vector<double>& shift) const {
  const std::size_t d = d_;
  const auto d1 = static_cast<std::int32_t>(d + 1);
  Grid g;
  g.offset.resize(n_ * (d + 1));
  g.barycentric.resize(n_ * (d + 1));
  VertexTable table(d, n_ * (d + 1));

  std::vector<double> scale(d), elevated(d + 1), bary(d + 2);
  std::vector<std::int32_t> rem0(d + 1), rank(d + 1), key(d);
  for (std::size_t i = 0; i < d; ++i) scale[i] = inv_std_ / std::sqrt(double((i + 1) * (i + 2)));

  for (std::size_t n = 0; n < n_; ++n) {
    const double* x = emb.vectors.data() + n * d;
    // Elevate onto the hyperplane sum(x) = 0 of R^{d+1}.
    double sm = 0.0;
    for (std::size_t i = d; i > 0; --i) {
      const double cf = (x[i - 1] + shift[i - 1]) * scale[i - 1];
      elevated[i] = sm - static_cast<double>(i) * cf;
      sm += cf;
    }
    elevated[0] = sm;

    // Nearest remainder-0 point and the ordering of the residuals.
    std::int32_t sum = 0;
    for (std::size_t i = 0; i <= d; ++i) {
      const double v = elevated[i] / d1;
      const double up = std::ceil(v) * d1, down = std::floor(v) * d1;
      rem0[i] = static_cast<std::int32_t>(up - elevated[i] < elevated[i] - down ? up : down);
      sum += rem0[i];
    }
    sum /= d1;
    std::fill(rank.begin(), rank.end(), 0);
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = i + 1; j <= d; ++j) {
        if (elevated[i] - rem0[i] < elevated[j] - rem0[j])
          ++rank[i];
        else
          ++rank[j];
      }
    for (std::size_t i = 0; i <= d; ++i) {
      rank[i] += sum;
      if (rank[i] < 0) {
        rank[i] += d1;
        rem0[i] += d1;
      } else if (rank[i] > static_cast<std::int32_t>(d)) {
        rank[i] -= d1;
        rem0[i] -= d1;
      }
    }

    std::fill(bary.begin(), bary.end(), 0.0);
    for (std::size_t i = 0; i <= d; ++i) {
      const double v = (elevated[i] - rem0[i]) / d1;
      bary[d - rank[i]] += v;
      bary[d + 1 - rank[i]] -= v;
    }
    bary[0] += 1.0 + bary[d + 1];

    for (std::size_t k = 0; k <= d; ++k) {
      const auto kk = static_cast<std::int32_t>(k);
      for (std::size_t i = 0; i < d; ++i)
        key[i] = rem0[i] + (rank[i] <= static_cast<std::int32_t>(d) - kk ? kk : kk - d1);
      g.offset[n * (d + 1) + k] = table.insert(key.data());
      g.barycentric[n * (d + 1) + k] = std::max(bary[k], 0.0);
    }
  }

  // Close the table under the blur stencil, direction by direction, so that
  // every vertex that can receive mass exists.
  std::vector<std::int32_t> nb(d);
  for (std::size_t j = 0; j <= d && opt_.closed; ++j)
    for (int pass = 0; pass < opt_.blur_passes; ++pass) {
      const std::size_t m = table.size();
      for (std::size_t v = 0; v < m; ++v) {
        std::copy(table.key(v), table.key(v) + d, key.begin());
        step(key.data(), nb.data(), d, j, +1);
        table.insert(nb.data());
        step(key.data(), nb.data(), d, j, -1);
        table.insert(nb.data());
      }
    }

  g.m = table.size();
  g.neighbor.resize((d + 1) * g.m * 2);
  for (std::size_t j = 0; j <= d; ++j)
    for (std::size_t v = 0; v < g.m; ++v) {
      step(table.key(v), nb.data(), d, j, +1);
      g.neighbor[(j * g.m + v) * 2] = table.find(nb.data());
      step(table.key(v), nb.data(), d, j, -1);
      g.neighbor[(j * g.m + v) * 2 + 1] = table.find(nb.data());
    }
  return g;
}

void PermutohedralLattice::blur(const Grid& g, std::vector<double>& buf, std::vector<double>& tmp,
                                std::size_t c, bool reverse) const {
  const std::size_t d = d_;
  for (std::size_t step = 0; step <= d; ++step) {
    const std::size_t j = reverse ? d - step : step;
    for (int pass = 0; pass < opt_.blur_passes; ++pass) {
      const std::int32_t* nbr = g.neighbor.data() + j * g.m * 2;
      for (std::size_t v = 0; v < g.m; ++v) {
        const double* self = buf.data() + v * c;
        double* dst = tmp.data() + v * c;
        for (std::size_t ch = 0; ch < c; ++ch) dst[ch] = 0.5 * self[ch];
        for (int side = 0; side < 2; ++side) {
          const std::int32_t u = nbr[2 * v + side];
          if (u < 0) continue;
          const double* src = buf.data() + static_cast<std::size_t>(u) * c;
          for (std::size_t ch = 0; ch < c; ++ch) dst[ch] += 0.25 * src[ch];
        }
      }
      buf.swap(tmp);
    }
  }
}

double PermutohedralLattice::traced_self_weight(const Grid& g, std::size_t i, TraceScratch& sc) const {
  const std::size_t d = d_;
  const std::int32_t* off = g.offset.data() + i * (d + 1);
  const double* b = g.barycentric.data() + i * (d + 1);
  if (sc.mass.size() != g.m) {
    sc.mass.assign(g.m, 0.0);
    sc.next_mass.assign(g.m, 0.0);
  }
  auto& cur = sc.cur;
  auto& next = sc.next;
  cur.clear();
  for (std::size_t k = 0; k <= d; ++k) {
    if (sc.mass[off[k]] == 0.0) cur.push_back(off[k]);
    sc.mass[off[k]] += b[k];
  }
  for (std::size_t j = 0; j <= d; ++j)
    for (int pass = 0; pass < opt_.blur_passes; ++pass) {
      next.clear();
      const std::int32_t* nbr = g.neighbor.data() + j * g.m * 2;
      auto add = [&](std::int32_t v, double m) {
        if (sc.next_mass[v] == 0.0) next.push_back(v);
        sc.next_mass[v] += m;
      };
      for (std::int32_t v : cur) {
        const double m = sc.mass[v];
        sc.mass[v] = 0.0;
        if (m == 0.0) continue;
        add(v, 0.5 * m);
        for (int side = 0; side < 2; ++side)
          if (const std::int32_t u = nbr[2 * static_cast<std::size_t>(v) + side]; u >= 0) add(u, 0.25 * m);
      }
      cur.swap(next);
      sc.mass.swap(sc.next_mass);
    }
  double w = 0.0;
  for (std::size_t k = 0; k <= d; ++k) w += b[k] * sc.mass[off[k]];
  for (std::int32_t v : cur) sc.mass[v] = 0.0;
  return w;
}

void PermutohedralLattice::filter_grid(const Grid& g, const double* in, double* out,
                                       std::size_t channels) const {
  const std::size_t d = d_, c = channels;
  std::vector<double> splat(g.m * c, 0.0), buf, tmp(g.m * c);

  for (std::size_t n = 0; n < n_; ++n)
    for (std::size_t k = 0; k <= d; ++k) {
      const double w = g.barycentric[n * (d + 1) + k];
      double* dst = splat.data() + static_cast<std::size_t>(g.offset[n * (d + 1) + k]) * c;
      for (std::size_t ch = 0; ch < c; ++ch) dst[ch] += w * in[ch * n_ + n];
    }

  const int orders = opt_.closed ? 1 : 2;
  const double scale = norm_ / static_cast<double>(grids_.size() * orders);
  for (int o = 0; o < orders; ++o) {
    buf = splat;
    blur(g, buf, tmp, c, o == 1);
    for (std::size_t n = 0; n < n_; ++n)
      for (std::size_t k = 0; k <= d; ++k) {
        const double w = scale * g.barycentric[n * (d + 1) + k];
        const double* src = buf.data() + static_cast<std::size_t>(g.offset[n * (d + 1) + k]) * c;
        for (std::size_t ch = 0; ch < c; ++ch) out[ch * n_ + n] += w * src[ch];
      }
  }
}

Tensor PermutohedralLattice::raw_filter(const Tensor& values) const {
  const std::size_t c = channels_of(values);
  Tensor out(values.shape());
  for (const Grid& g : grids_) filter_grid(g, values.data().data(), out.data().data(), c);
  return out;
}

Tensor PermutohedralLattice::pairwise_apply(const Tensor& values) const {
  const std::size_t c = channels_of(values);
  Tensor out = raw_filter(values);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < n_; ++i)
      out[ch * n_ + i] = gain_ * (out[ch * n_ + i] - self_weight_[i] * values[ch * n_ + i]);
  return out;
}

}  // namespace ucrf
