#include "ucrf/learn/checkpoint.hpp"

#include <stdexcept>

#include "ucrf/core/io.hpp"

namespace ucrf {

namespace {

std::string backbone_file(const char* what, std::size_t k) {
  return "backbone_" + std::string(what) + std::to_string(k + 1) + ".ucrf";
}

Tensor load_shaped(const std::filesystem::path& p, const std::vector<std::size_t>& shape) {
  if (!std::filesystem::exists(p)) throw std::runtime_error("checkpoint: missing " + p.string());
  Tensor t = read_tensor(p);
  if (t.shape() != shape)
    throw std::runtime_error("checkpoint: " + p.filename().string() + " has shape " + shape_string(t.shape()) +
                             ", expected " + shape_string(shape));
  return t;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& ckpt) {
  if (!ckpt.net && !ckpt.model) throw std::invalid_argument("save_checkpoint: nothing to save");
  std::filesystem::create_directories(dir);
  Manifest m;
  if (ckpt.model) {
    save_cascade(*ckpt.model, dir, m);
  } else {
    m.set("format", "ucrf-checkpoint");
    m.set("version", std::to_string(kCheckpointVersion));
  }
  m.set("stage", std::to_string(ckpt.stage));
  m.set("cascade", ckpt.model ? "1" : "0");
  m.set("backbone", ckpt.net ? "1" : "0");
  if (ckpt.net) {
    const ToyBackbone& n = *ckpt.net;
    m.set("backbone.channels", std::to_string(n.channels));
    for (std::size_t k = 0; k < ToyBackbone::kStages; ++k) {
      write_tensor(dir / backbone_file("conv_w", k), n.conv_w[k]);
      write_tensor(dir / backbone_file("conv_b", k), n.conv_b[k]);
      write_tensor(dir / backbone_file("head_w", k), n.head_w[k]);
      write_tensor(dir / backbone_file("head_b", k), n.head_b[k]);
    }
  }
  m.write(dir / kManifestName);
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  const auto mp = dir / kManifestName;
  if (!std::filesystem::exists(mp)) throw std::runtime_error("checkpoint: missing " + mp.string());
  const Manifest m = Manifest::read(mp);
  if (m.get("format") != "ucrf-checkpoint") throw std::runtime_error("checkpoint: unknown format");
  if (m.get_int("version") != kCheckpointVersion)
    throw std::runtime_error("checkpoint: version " + m.get("version") + " is not supported");
  Checkpoint c;
  c.stage = static_cast<int>(m.get_int("stage"));
  if (m.get_int("cascade")) c.model = load_cascade(dir, m);
  if (m.get_int("backbone")) {
    const long M = m.get_int("backbone.channels");
    if (M <= 0) throw std::runtime_error("checkpoint: bad backbone channel count");
    ToyBackbone n = init_backbone(static_cast<std::size_t>(M), 0);
    for (std::size_t k = 0; k < ToyBackbone::kStages; ++k) {
      n.conv_w[k] = load_shaped(dir / backbone_file("conv_w", k), n.conv_w[k].shape());
      n.conv_b[k] = load_shaped(dir / backbone_file("conv_b", k), n.conv_b[k].shape());
      n.head_w[k] = load_shaped(dir / backbone_file("head_w", k), n.head_w[k].shape());
      n.head_b[k] = load_shaped(dir / backbone_file("head_b", k), n.head_b[k].shape());
    }
    c.net = std::move(n);
  }
  if (c.net && c.model && c.net->channels != c.model->channels())
    throw std::runtime_error("checkpoint: backbone and cascade channel counts differ");
  return c;
}

}  // namespace ucrf
