#include "ucrf/learn/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>
#include <stdexcept>

#include "ucrf/core/io.hpp"

namespace ucrf {

Sample augment_hflip(const Sample& s) { return {s.name, hflip(s.image), hflip(s.mask)}; }

void SynthConfig::validate() const {
  if (count == 0) throw std::invalid_argument("synth: count must be positive");
  if (width < 8 || height < 8) throw std::invalid_argument("synth: image must be at least 8x8");
  if (min_shapes < 1 || max_shapes < min_shapes) throw std::invalid_argument("synth: bad shape count range");
  if (!(min_area > 0 && min_area <= max_area && max_area < 1)) throw std::invalid_argument("synth: bad area range");
  if (!(min_foreground >= 0 && min_foreground < max_foreground && max_foreground <= 1))
    throw std::invalid_argument("synth: bad foreground range");
  if (min_area > max_foreground) throw std::invalid_argument("synth: one shape already exceeds the foreground limit");
  if (!(min_color_offset >= 0 && min_color_offset < 0.8))
    throw std::invalid_argument("synth: color offset must be in [0, 0.8)");
}

namespace {

struct Shape {
  int kind;  // 0 ellipse, 1 rectangle, 2 triangle
  double cx, cy, a, b, angle;
  double tri[6];
  double color[3];
};

bool inside(const Shape& s, double x, double y) {
  if (s.kind == 2) {
    auto edge = [&](int i, int j) {
      return (s.tri[2 * j] - s.tri[2 * i]) * (y - s.tri[2 * i + 1]) -
             (s.tri[2 * j + 1] - s.tri[2 * i + 1]) * (x - s.tri[2 * i]);
    };
    const double e0 = edge(0, 1), e1 = edge(1, 2), e2 = edge(2, 0);
    return (e0 >= 0 && e1 >= 0 && e2 >= 0) || (e0 <= 0 && e1 <= 0 && e2 <= 0);
  }
  const double c = std::cos(s.angle), sn = std::sin(s.angle);
  const double u = (x - s.cx) * c + (y - s.cy) * sn, v = -(x - s.cx) * sn + (y - s.cy) * c;
  if (s.kind == 0) return (u * u) / (s.a * s.a) + (v * v) / (s.b * s.b) <= 1.0;
  return std::abs(u) <= s.a && std::abs(v) <= s.b;
}

Sample try_sample(const SynthConfig& cfg, std::mt19937_64& rng, std::size_t index) {
  std::uniform_real_distribution<double> u01(0, 1);
  const double W = static_cast<double>(cfg.width), H = static_cast<double>(cfg.height);
  double bg[3];
  for (double& c : bg) c = 0.2 + 0.6 * u01(rng);

  // Background texture: two oriented gratings plus fine noise.
  double freq[2], phase[2], dir[2], amp[2];
  for (int k = 0; k < 2; ++k) {
    freq[k] = 0.15 + 0.5 * u01(rng);
    phase[k] = 2 * std::numbers::pi * u01(rng);
    dir[k] = std::numbers::pi * u01(rng);
    amp[k] = 0.04 + 0.04 * u01(rng);
  }

  std::uniform_int_distribution<int> nshape(cfg.min_shapes, cfg.max_shapes);
  const int n = nshape(rng);
  std::vector<Shape> shapes;
  for (int k = 0; k < n; ++k) {
    Shape s{};
    s.kind = std::uniform_int_distribution<int>(0, 2)(rng);
    const double area = (cfg.min_area + (cfg.max_area - cfg.min_area) * u01(rng)) * W * H;
    const double aspect = std::exp(std::log(0.5) + std::log(4.0) * u01(rng));
    s.angle = std::numbers::pi * u01(rng);
    double half_w, half_h;
    if (s.kind == 0) {
      s.a = std::sqrt(area * aspect / std::numbers::pi);
      s.b = area / (std::numbers::pi * s.a);
      half_w = half_h = std::max(s.a, s.b);
    } else if (s.kind == 1) {
      s.a = 0.5 * std::sqrt(area * aspect);
      s.b = area / (4 * s.a);
      half_w = half_h = std::hypot(s.a, s.b);
    } else {
      // Base and height give the area; apex offset and rotation vary the shape.
      const double base = std::sqrt(2 * area * aspect), height = 2 * area / base;
      const double apex = (u01(rng) - 0.5) * base;
      const double pts[6] = {-base / 2, height / 3, base / 2, height / 3, apex, -2 * height / 3};
      const double c = std::cos(s.angle), sn = std::sin(s.angle);
      half_w = half_h = 0;
      for (int i = 0; i < 3; ++i) {
        s.tri[2 * i] = pts[2 * i] * c - pts[2 * i + 1] * sn;
        s.tri[2 * i + 1] = pts[2 * i] * sn + pts[2 * i + 1] * c;
        half_w = std::max(half_w, std::abs(s.tri[2 * i]));
        half_h = std::max(half_h, std::abs(s.tri[2 * i + 1]));
      }
    }
    // Keep the centre far enough in that most of the shape stays visible.
    const double mx = std::min(0.5 * half_w, 0.5 * W), my = std::min(0.5 * half_h, 0.5 * H);
    s.cx = mx + (W - 2 * mx) * u01(rng);
    s.cy = my + (H - 2 * my) * u01(rng);
    if (s.kind == 2)
      for (int i = 0; i < 3; ++i) {
        s.tri[2 * i] += s.cx;
        s.tri[2 * i + 1] += s.cy;
      }
    for (int attempt = 0;; ++attempt) {
      if (attempt == 1000) throw std::runtime_error("synth: cannot find a contrasting color");
      double d2 = 0;
      for (int c = 0; c < 3; ++c) {
        s.color[c] = u01(rng);
        d2 += (s.color[c] - bg[c]) * (s.color[c] - bg[c]);
      }
      if (std::sqrt(d2) >= cfg.min_color_offset) break;
    }
    shapes.push_back(s);
  }

  Sample out;
  char name[32];
  std::snprintf(name, sizeof name, "%04zu", index);
  out.name = name;
  out.image = RgbImage(cfg.width, cfg.height);
  std::vector<std::uint8_t> mask(cfg.width * cfg.height, 0);
  std::normal_distribution<double> noise(0.0, 0.02);
  for (std::size_t y = 0; y < cfg.height; ++y)
    for (std::size_t x = 0; x < cfg.width; ++x) {
      const double px = static_cast<double>(x) + 0.5, py = static_cast<double>(y) + 0.5;
      const Shape* top = nullptr;
      for (const auto& s : shapes)
        if (inside(s, px, py)) top = &s;
      double tex = 0;
      for (int k = 0; k < 2; ++k)
        tex += amp[k] * std::sin(freq[k] * (px * std::cos(dir[k]) + py * std::sin(dir[k])) + phase[k]);
      for (std::size_t c = 0; c < 3; ++c) {
        const double base = top ? top->color[c] + 0.3 * tex : bg[c] + tex;
        out.image.set(c, y, x, std::clamp(base + noise(rng), 0.0, 1.0));
      }
      mask[y * cfg.width + x] = top ? 1 : 0;
    }
  out.mask = GroundTruthMask(cfg.width, cfg.height, std::move(mask));
  return out;
}

}  // namespace

Sample synth_sample(const SynthConfig& cfg, std::uint64_t seed, std::size_t index) {
  cfg.validate();
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  std::mt19937_64 rng(seq);
  for (int attempt = 0; attempt < 200; ++attempt) {
    Sample s = try_sample(cfg, rng, index);
    const double frac = static_cast<double>(s.mask.foreground_count()) / static_cast<double>(s.mask.size());
    if (frac >= cfg.min_foreground && frac <= cfg.max_foreground && frac > 0 && frac < 1) return s;
  }
  throw std::runtime_error("synth: constraints could not be met after 200 attempts");
}

std::vector<Sample> synth_generate(const SynthConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::vector<Sample> out;
  out.reserve(cfg.count);
  for (std::size_t i = 0; i < cfg.count; ++i) out.push_back(synth_sample(cfg, seed, i));
  return out;
}

void save_dataset(const std::filesystem::path& dir, const std::vector<Sample>& samples) {
  std::filesystem::create_directories(dir / "img");
  std::filesystem::create_directories(dir / "gt");
  for (const auto& s : samples) {
    write_rgb_png(dir / "img" / (s.name + ".png"), s.image);
    write_mask_png(dir / "gt" / (s.name + ".png"), s.mask);
  }
}

std::vector<Sample> load_dataset(const std::filesystem::path& dir) {
  const auto img_dir = dir / "img", gt_dir = dir / "gt";
  if (!std::filesystem::is_directory(img_dir) || !std::filesystem::is_directory(gt_dir))
    throw std::runtime_error("dataset " + dir.string() + ": expected img/ and gt/ subdirectories");
  std::vector<std::filesystem::path> names;
  for (const auto& e : std::filesystem::directory_iterator(img_dir))
    if (e.is_regular_file() && e.path().extension() == ".png") names.push_back(e.path().filename());
  std::sort(names.begin(), names.end());
  if (names.empty()) throw std::runtime_error("dataset " + dir.string() + ": no images in img/");
  std::vector<Sample> out;
  for (const auto& n : names) {
    if (!std::filesystem::exists(gt_dir / n)) throw std::runtime_error("dataset: missing mask " + (gt_dir / n).string());
    Sample s{n.stem().string(), read_rgb_image(img_dir / n), read_mask(gt_dir / n)};
    if (s.image.width() != s.mask.width() || s.image.height() != s.mask.height())
      throw std::runtime_error("dataset: image and mask sizes differ for " + n.string());
    out.push_back(std::move(s));
  }
  return out;
}

Sample resize_sample(const Sample& s, std::size_t width, std::size_t height) {
  if (s.image.width() == width && s.image.height() == height) return s;
  Sample out;
  out.name = s.name;
  Tensor px = bilinear_resize(s.image.tensor(), width, height);
  for (double& v : px.data()) v = std::clamp(v, 0.0, 1.0);
  out.image = RgbImage(std::move(px));
  std::vector<std::uint8_t> m(width * height);
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x) {
      const std::size_t sy = std::min(s.mask.height() - 1, (2 * y + 1) * s.mask.height() / (2 * height));
      const std::size_t sx = std::min(s.mask.width() - 1, (2 * x + 1) * s.mask.width() / (2 * width));
      m[y * width + x] = s.mask.at(sy, sx);
    }
  out.mask = GroundTruthMask(width, height, std::move(m));
  return out;
}

SideOutputs import_side_outputs(const std::filesystem::path& dir, std::size_t W, std::size_t H, std::size_t scales) {
  SideOutputs so;
  for (std::size_t l = 1; l <= scales; ++l) {
    const auto fp = dir / ("f" + std::to_string(l) + ".ucrf");
    const auto sp = dir / ("s" + std::to_string(l) + ".ucrf");
    for (const auto& p : {fp, sp})
      if (!std::filesystem::exists(p)) throw std::runtime_error("side outputs: missing " + p.string());
    Tensor f = read_tensor(fp);
    if (f.rank() != 3) throw std::runtime_error(fp.string() + ": expected a (M, H, W) tensor");
    if (!so.f.empty() && f.dim(0) != so.f[0].channels())
      throw std::runtime_error(fp.string() + ": has " + std::to_string(f.dim(0)) + " channels, f1 has " +
                               std::to_string(so.f[0].channels()));
    // Scale l must halve into scale l-1; the finest scale halves into the image.
    const std::size_t fine_h = f.dim(1), fine_w = f.dim(2);
    if (!so.f.empty() && ((fine_h + 1) / 2 != so.f.back().height() || (fine_w + 1) / 2 != so.f.back().width()))
      throw std::runtime_error(fp.string() + ": spatial size " + std::to_string(fine_h) + "x" +
                               std::to_string(fine_w) + " does not halve to the size of the previous scale");
    Tensor s = read_tensor(sp);
    if (s.rank() == 2) s = Tensor({1, s.dim(0), s.dim(1)}, s.vec());
    if (s.rank() != 3 || s.dim(0) != 1 || s.dim(1) != H || s.dim(2) != W)
      throw std::runtime_error(sp.string() + ": shape " + shape_string(s.shape()) + " is not the image size " +
                               std::to_string(H) + "x" + std::to_string(W));
    so.f.emplace_back(std::move(f));
    so.s.emplace_back(std::move(s));
  }
  const auto& finest = so.f.back();
  if ((H + 1) / 2 != finest.height() || (W + 1) / 2 != finest.width())
    throw std::runtime_error("side outputs: f" + std::to_string(scales) + " is not half the image size");
  return so;
}

void export_side_outputs(const std::filesystem::path& dir, const SideOutputs& so) {
  std::filesystem::create_directories(dir);
  for (std::size_t l = 0; l < so.f.size(); ++l) {
    write_tensor(dir / ("f" + std::to_string(l + 1) + ".ucrf"), so.f[l].values);
    write_tensor(dir / ("s" + std::to_string(l + 1) + ".ucrf"), so.s[l].values);
  }
}

}  // namespace ucrf
