#pragma once

#include <vector>

#include "ucrf/core/maps.hpp"

namespace ucrf {

/// Sigmoid cross-entropy summed over pixels. If grad is non-null it receives
/// sigmoid(logit) - g per pixel, the gradient of the sum.
double sigmoid_cross_entropy(const PredictionMap& logits, const GroundTruthMask& g, Tensor* grad = nullptr);

/// Sum over scales of the per-scale cross-entropy, all scales weighted 1.
double stage1_loss(const std::vector<PredictionMap>& s, const GroundTruthMask& g, std::vector<Tensor>* grads = nullptr);

/// Cross-entropy of the final cascade output only.
double stage2_loss(const PredictionMap& o_final, const GroundTruthMask& g, Tensor* grad = nullptr);

}  // namespace ucrf
