#pragma once

#include <filesystem>
#include <optional>

#include "ucrf/cascade/cascade.hpp"
#include "ucrf/learn/backbone.hpp"

namespace ucrf {

/// A training checkpoint: the backbone, the cascade, or both.
struct Checkpoint {
  int stage = 1;
  std::optional<ToyBackbone> net;
  std::optional<CascadeModel> model;
};

inline constexpr const char* kManifestName = "manifest.txt";

/// dir/manifest.txt plus one UCRF1 file per parameter array.
void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& dir);

}  // namespace ucrf
