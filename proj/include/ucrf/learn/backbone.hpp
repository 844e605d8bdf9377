#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "ucrf/core/maps.hpp"
#include "ucrf/core/tensor.hpp"

namespace ucrf {

/// Five-stage toy encoder. Stage k (1 = finest) is conv 3x3 + bias, ReLU and
/// 2x2 average pooling; its pooled output is the feature map of scale 6 - k,
/// so scale 1 is the coarsest. Each scale has a 1x1 side head whose output
/// is bilinearly upsampled to full resolution.
struct ToyBackbone {
  static constexpr std::size_t kStages = 5;
  /// Smallest input side that still halves five times (16 -> 8, 4, 2, 1, 1).
  static constexpr std::size_t kMinSide = 16;

  std::size_t channels = 0;
  std::array<Tensor, kStages> conv_w;  // stage k: (M, C_in, 3, 3)
  std::array<Tensor, kStages> conv_b;  // (M)
  std::array<Tensor, kStages> head_w;  // scale l at index l - 1: (1, M)
  std::array<Tensor, kStages> head_b;  // (1)

  friend bool operator==(const ToyBackbone&, const ToyBackbone&) = default;
};

/// He-style fan-in uniform conv weights, zero biases, heads uniform in
/// +-1/sqrt(M); rounded to float32.
ToyBackbone init_backbone(std::size_t channels, std::uint64_t seed);

struct BackboneTrace {
  Tensor input;                          // (3, H, W)
  std::array<Tensor, ToyBackbone::kStages> act;     // ReLU output, before pooling
  std::array<Tensor, ToyBackbone::kStages> pooled;  // stage outputs
  std::vector<FeatureMap> f;     // f^1..f^5, coarse to fine
  std::vector<PredictionMap> s;  // s^1..s^5, full-resolution logits
};

BackboneTrace backbone_forward(const ToyBackbone& net, const RgbImage& img);

/// Same layout as the parameters, zero-filled.
ToyBackbone zero_like(const ToyBackbone& net);

/// Accumulates parameter gradients into grads. grad_f / grad_s are indexed by
/// scale (0 = scale 1); empty entries mean no gradient.
void backbone_backward(const ToyBackbone& net, const BackboneTrace& trace, const std::vector<Tensor>& grad_f,
                       const std::vector<Tensor>& grad_s, ToyBackbone& grads);

}  // namespace ucrf
