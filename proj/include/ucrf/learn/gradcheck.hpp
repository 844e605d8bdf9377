#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace ucrf {

struct GradcheckOptions {
  std::size_t size = 8;  // cascade instance side
  std::size_t channels = 4;
  std::size_t scales = 3;
  int T = 3;
  std::uint64_t seed = 1;
  double step = 1e-6;
  // The backbone needs at least 16 pixels per side.
  bool backbone = true;
  std::size_t backbone_size = 16;
};

struct GradcheckEntry {
  std::string name;  // e.g. "block3.W", "input.f2", "backbone.conv_w1", "e2e.block3.W"
  std::size_t checked = 0;
  double max_rel = 0.0;
};

struct GradcheckReport {
  std::vector<GradcheckEntry> entries;
  double max_rel() const;
};

/// |analytic - numeric| / max(|analytic|, |numeric|, 1e-4) against central
/// differences, for every entry of every learnable array and input, with
/// the production kernels and random upstream gradients on all scales.
GradcheckReport run_gradcheck(const GradcheckOptions& opt);

}  // namespace ucrf
