#include "ucrf/cascade/cascade.hpp"

#include <cstdio>
#include <fstream>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <tuple>

#include "ucrf/core/io.hpp"
#include "ucrf/lattice/embedding.hpp"

namespace ucrf {

const ScaleSettings& ScaleConfig::scale(std::size_t l) const {
  if (l < 1 || l > scales_.size())
    throw std::out_of_range("scale " + std::to_string(l) + " outside 1.." + std::to_string(scales_.size()));
  return scales_[l - 1];
}

ScaleSettings& ScaleConfig::scale(std::size_t l) {
  return const_cast<ScaleSettings&>(static_cast<const ScaleConfig&>(*this).scale(l));
}

void ScaleConfig::set_messages(MessageSet m) {
  for (auto& s : scales_) s.messages = m;
}

ScaleConfig default_scale_config(std::size_t scales) {
  if (scales < 2) throw std::invalid_argument("cascade needs at least 2 scales");
  ScaleConfig c(scales);
  for (std::size_t l = 1; l <= scales; ++l) c.scale(l) = ScaleSettings{60.0, 5.0, 3.0, 3, MessageSet::all()};
  c.scale(scales) = ScaleSettings{1.0, 10.0, 10.0, 3, MessageSet::all()};
  return c;
}

CascadeModel::CascadeModel(ScaleConfig config, std::size_t channels, std::size_t kernel, std::uint64_t seed)
    : config_(std::move(config)), channels_(channels), kernel_(kernel) {
  if (config_.scale_count() < 2) throw std::invalid_argument("cascade needs at least 2 scales");
  for (std::size_t l = 2; l <= config_.scale_count(); ++l) blocks_.push_back(init_block_params(channels, kernel, seed + l));
  set_config(config_);
}

void CascadeModel::set_config(const ScaleConfig& config) {
  if (config.scale_count() != config_.scale_count()) throw std::invalid_argument("cascade: scale count mismatch");
  config_ = config;
  for (std::size_t l = 2; l <= config_.scale_count(); ++l) {
    const auto& s = config_.scale(l);
    auto& b = block(l);
    b.sigma_alpha = s.sigma_alpha;
    b.sigma_beta = s.sigma_beta;
    b.sigma_gamma = s.sigma_gamma;
    b.T = s.T;
    b.messages = s.messages;
    b.validate();
  }
}

void CascadeModel::set_messages(MessageSet m) {
  ScaleConfig c = config_;
  c.set_messages(m);
  set_config(c);
}

CrfBlockParams& CascadeModel::block(std::size_t l) {
  return const_cast<CrfBlockParams&>(static_cast<const CascadeModel&>(*this).block(l));
}

const CrfBlockParams& CascadeModel::block(std::size_t l) const {
  if (l < 2 || l > scale_count())
    throw std::out_of_range("no block at scale " + std::to_string(l) + " (blocks are at 2.." +
                            std::to_string(scale_count()) + ")");
  return blocks_[l - 2];
}

bool operator==(const CascadeModel& a, const CascadeModel& b) {
  if (a.scale_count() != b.scale_count() || a.channels_ != b.channels_ || a.kernel_ != b.kernel_) return false;
  for (std::size_t i = 0; i < a.blocks_.size(); ++i) {
    const auto &x = a.blocks_[i], &y = b.blocks_[i];
    if (!(x.W == y.W && x.V == y.V && x.inv_alpha == y.inv_alpha && x.head == y.head && x.beta1 == y.beta1 &&
          x.beta2 == y.beta2 && x.sigma_alpha == y.sigma_alpha && x.sigma_beta == y.sigma_beta &&
          x.sigma_gamma == y.sigma_gamma && x.T == y.T && x.messages == y.messages))
      return false;
  }
  return true;
}

LatticeOptions cascade_lattice_options() {
  LatticeOptions o;
  o.shifts = 2;
  o.closed = false;
  return o;
}

KernelFactory lattice_kernel_factory(LatticeOptions opt, double intensity_scale) {
  return [opt, intensity_scale](const RgbImage& img, double a, double b, double g) {
    return build_lattice_kernels(img, a, b, g, opt, intensity_scale);
  };
}

KernelFactory auto_kernel_factory(LatticeOptions opt, double window_sigma, double intensity_scale) {
  struct Cache {
    std::mutex mu;
    std::map<std::tuple<std::size_t, std::size_t, double>, std::shared_ptr<const PairwiseOperator>> k2;
  };
  auto cache = std::make_shared<Cache>();
  return [opt, window_sigma, intensity_scale, cache](const RgbImage& img, double a, double b, double g) {
    const std::size_t w = img.width(), h = img.height();
    std::shared_ptr<const PairwiseOperator> k1;
    const EmbeddingSet e1 = build_bilateral_features(img, a, b, intensity_scale);
    if (a <= window_sigma)
      k1 = std::make_shared<WindowedKernel>(e1, w, h, WindowedKernel::radius_for(a));
    else
      k1 = std::make_shared<PermutohedralLattice>(e1, opt);

    std::shared_ptr<const PairwiseOperator> k2;
    {
      std::lock_guard lock(cache->mu);
      auto& slot = cache->k2[{w, h, g}];
      if (!slot) slot = std::make_shared<SeparableSpatialKernel>(w, h, g);
      k2 = slot;
    }
    return KernelPair(k1, k2);
  };
}

namespace {

void check_inputs(const CascadeInputs& in, const RgbImage& img, const CascadeModel& model) {
  const std::size_t L = model.scale_count();
  if (in.f.size() != L || in.s.size() != L)
    throw std::invalid_argument("cascade: expected " + std::to_string(L) + " feature and prediction maps, got " +
                                std::to_string(in.f.size()) + " and " + std::to_string(in.s.size()));
  for (std::size_t l = 0; l < L; ++l) {
    if (in.s[l].height() != img.height() || in.s[l].width() != img.width())
      throw std::invalid_argument("cascade: s" + std::to_string(l + 1) + " is not at image resolution");
    if (in.f[l].channels() != model.channels())
      throw std::invalid_argument("cascade: f" + std::to_string(l + 1) + " has " +
                                  std::to_string(in.f[l].channels()) + " channels, model expects " +
                                  std::to_string(model.channels()));
  }
}

}  // namespace

CascadeTrace cascade_forward(const CascadeInputs& in, const RgbImage& img, const CascadeModel& model,
                             const KernelFactory& kernels) {
  check_inputs(in, img, model);
  const std::size_t L = model.scale_count();
  CascadeTrace tr;
  tr.h.push_back(in.f[0]);
  tr.o.push_back(in.s[0]);
  std::map<std::tuple<double, double, double>, KernelPair> cache;
  for (std::size_t l = 2; l <= L; ++l) {
    const CrfBlockParams& p = model.block(l);
    KernelPair k;
    if (p.messages.ss) {
      const auto key = std::make_tuple(p.sigma_alpha, p.sigma_beta, p.sigma_gamma);
      auto it = cache.find(key);
      if (it == cache.end()) {
        KernelPair fresh = kernels(img, p.sigma_alpha, p.sigma_beta, p.sigma_gamma);
        if (fresh.rows1.empty()) fresh.cache_row_sums();
        it = cache.emplace(key, std::move(fresh)).first;
      }
      k = it->second;
    }
    auto out = crf_block_forward(in.f[l - 1], in.s[l - 1], tr.h.back(), tr.o.back(), k, p);
    tr.h.push_back(out.h);
    tr.o.push_back(out.o);
    tr.blocks.push_back(std::move(out));
    tr.kernels.push_back(std::move(k));
  }
  return tr;
}

CascadeGrads cascade_backward(const CascadeTrace& trace, const std::vector<Tensor>& grad_o, const CascadeInputs& in,
                              const CascadeModel& model) {
  const std::size_t L = model.scale_count();
  if (trace.blocks.size() != L - 1 || trace.o.size() != L) throw std::invalid_argument("cascade_backward: missing trace");
  if (grad_o.size() != L) throw std::invalid_argument("cascade_backward: need one gradient slot per scale");
  CascadeGrads g;
  g.blocks.resize(L - 1);
  g.f.resize(L);
  g.s.resize(L);

  auto add = [](Tensor& acc, const Tensor& x) {
    if (x.empty()) return;
    if (acc.empty())
      acc = x;
    else
      acc += x;
  };
  Tensor go = grad_o[L - 1];
  if (go.empty()) go = Tensor(trace.o.back().values.shape());
  Tensor gh;
  for (std::size_t l = L; l >= 2; --l) {
    const auto& out = trace.blocks[l - 2];
    auto bg = crf_block_backward(out, PredictionMap(go), gh, in.f[l - 1], trace.h[l - 2], trace.o[l - 2],
                                 trace.kernels[l - 2], model.block(l));
    g.f[l - 1] = std::move(bg.f);
    g.s[l - 1] = std::move(bg.s);
    gh = std::move(bg.h_prev);
    go = std::move(bg.o_prev);
    add(go, grad_o[l - 2]);
    g.blocks[l - 2] = std::move(bg);
  }
  g.f[0] = std::move(gh);
  g.s[0] = std::move(go);
  return g;
}

CascadeGrads cascade_backward(const CascadeTrace& trace, const PredictionMap& grad_final, const CascadeInputs& in,
                              const CascadeModel& model) {
  std::vector<Tensor> go(model.scale_count());
  go.back() = grad_final.values;
  return cascade_backward(trace, go, in, model);
}

void Manifest::set(const std::string& key, const std::string& value) {
  if (key.empty() || key.find_first_of(" \t\n") != std::string::npos)
    throw std::invalid_argument("manifest: bad key '" + key + "'");
  auto it = index_.find(key);
  if (it != index_.end()) {
    entries_[it->second].second = value;
    return;
  }
  index_[key] = entries_.size();
  entries_.emplace_back(key, value);
}

void Manifest::set(const std::string& key, double value) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", value);
  set(key, std::string(buf));
}

const std::string& Manifest::get(const std::string& key) const {
  auto it = index_.find(key);
  if (it == index_.end()) throw std::runtime_error("manifest: missing key '" + key + "'");
  return entries_[it->second].second;
}

double Manifest::get_double(const std::string& key) const {
  const std::string& v = get(key);
  std::size_t pos = 0;
  double d = 0;
  try {
    d = std::stod(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != v.size() || v.empty()) throw std::runtime_error("manifest: '" + key + "' is not a number: " + v);
  return d;
}

long Manifest::get_int(const std::string& key) const {
  const std::string& v = get(key);
  std::size_t pos = 0;
  long n = 0;
  try {
    n = std::stol(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != v.size() || v.empty()) throw std::runtime_error("manifest: '" + key + "' is not an integer: " + v);
  return n;
}

void Manifest::write(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  for (const auto& [k, v] : entries_) os << k << ' ' << v << '\n';
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

Manifest Manifest::read(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read " + path.string());
  Manifest m;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto sp = line.find(' ');
    if (sp == std::string::npos) throw std::runtime_error(path.string() + ": malformed line '" + line + "'");
    m.set(line.substr(0, sp), line.substr(sp + 1));
  }
  return m;
}

namespace {

std::string block_file(std::size_t l, const char* name) {
  return "block" + std::to_string(l) + "_" + name + ".ucrf";
}

Tensor load_checked(const std::filesystem::path& path, const std::vector<std::size_t>& shape) {
  Tensor t = read_tensor(path);
  if (t.shape() != shape)
    throw std::runtime_error(path.string() + ": shape " + shape_string(t.shape()) + ", expected " +
                             shape_string(shape));
  return t;
}

}  // namespace

void save_cascade(const CascadeModel& model, const std::filesystem::path& dir, Manifest& m) {
  std::filesystem::create_directories(dir);
  m.set("format", "ucrf-checkpoint");
  m.set("version", std::to_string(kCheckpointVersion));
  m.set("scales", std::to_string(model.scale_count()));
  m.set("channels", std::to_string(model.channels()));
  m.set("kernel", std::to_string(model.kernel()));
  for (std::size_t l = 2; l <= model.scale_count(); ++l) {
    const auto& b = model.block(l);
    const std::string p = "scale" + std::to_string(l) + ".";
    m.set(p + "sigma_alpha", b.sigma_alpha);
    m.set(p + "sigma_beta", b.sigma_beta);
    m.set(p + "sigma_gamma", b.sigma_gamma);
    m.set(p + "T", std::to_string(b.T));
    m.set(p + "messages", b.messages.str());
    write_tensor(dir / block_file(l, "W"), b.W);
    write_tensor(dir / block_file(l, "V"), b.V);
    write_tensor(dir / block_file(l, "inv_alpha"), b.inv_alpha);
    write_tensor(dir / block_file(l, "head"), b.head);
    Tensor beta({2});
    beta[0] = b.beta1;
    beta[1] = b.beta2;
    write_tensor(dir / block_file(l, "beta"), beta);
  }
}

CascadeModel load_cascade(const std::filesystem::path& dir, const Manifest& m, std::size_t expected_scales) {
  if (m.get("format") != "ucrf-checkpoint") throw std::runtime_error("checkpoint: unknown format");
  if (m.get_int("version") != kCheckpointVersion)
    throw std::runtime_error("checkpoint: version " + m.get("version") + " is not supported (expected " +
                             std::to_string(kCheckpointVersion) + ")");
  const long L = m.get_int("scales");
  if (L < 2) throw std::runtime_error("checkpoint: bad scale count");
  if (expected_scales && static_cast<std::size_t>(L) != expected_scales)
    throw std::runtime_error("checkpoint: manifest has " + std::to_string(L) + " scales, expected " +
                             std::to_string(expected_scales));
  const auto M = static_cast<std::size_t>(m.get_int("channels"));
  const auto k = static_cast<std::size_t>(m.get_int("kernel"));
  ScaleConfig cfg = default_scale_config(static_cast<std::size_t>(L));
  for (std::size_t l = 2; l <= static_cast<std::size_t>(L); ++l) {
    const std::string p = "scale" + std::to_string(l) + ".";
    auto& s = cfg.scale(l);
    s.sigma_alpha = m.get_double(p + "sigma_alpha");
    s.sigma_beta = m.get_double(p + "sigma_beta");
    s.sigma_gamma = m.get_double(p + "sigma_gamma");
    s.T = static_cast<int>(m.get_int(p + "T"));
    s.messages = MessageSet::parse(m.get(p + "messages"));
  }
  CascadeModel model(cfg, M, k, 0);
  for (std::size_t l = 2; l <= static_cast<std::size_t>(L); ++l) {
    auto& b = model.block(l);
    b.W = load_checked(dir / block_file(l, "W"), {M, M, k, k});
    b.V = load_checked(dir / block_file(l, "V"), {M, M, k, k});
    b.inv_alpha = load_checked(dir / block_file(l, "inv_alpha"), {M});
    b.head = load_checked(dir / block_file(l, "head"), {1, M});
    Tensor beta = load_checked(dir / block_file(l, "beta"), {2});
    b.beta1 = beta[0];
    b.beta2 = beta[1];
    b.validate();
  }
  return model;
}

}  // namespace ucrf
