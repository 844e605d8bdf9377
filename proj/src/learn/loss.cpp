#include "ucrf/learn/loss.hpp"

#include <cmath>
#include <stdexcept>

namespace ucrf {

double sigmoid_cross_entropy(const PredictionMap& logits, const GroundTruthMask& g, Tensor* grad) {
  if (logits.height() != g.height() || logits.width() != g.width())
    throw std::invalid_argument("cross-entropy: prediction " + shape_string(logits.values.shape()) +
                                " does not match mask " + std::to_string(g.height()) + "x" + std::to_string(g.width()));
  if (grad) *grad = Tensor(logits.values.shape());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double x = logits[i], y = g[i];
    total += std::max(x, 0.0) - x * y + std::log1p(std::exp(-std::abs(x)));
    if (grad) (*grad)[i] = sigmoid(x) - y;
  }
  return total;
}

double stage1_loss(const std::vector<PredictionMap>& s, const GroundTruthMask& g, std::vector<Tensor>* grads) {
  if (s.empty()) throw std::invalid_argument("stage1_loss: no side outputs");
  if (grads) grads->assign(s.size(), Tensor());
  double total = 0.0;
  for (std::size_t l = 0; l < s.size(); ++l) total += sigmoid_cross_entropy(s[l], g, grads ? &(*grads)[l] : nullptr);
  return total;
}

double stage2_loss(const PredictionMap& o_final, const GroundTruthMask& g, Tensor* grad) {
  return sigmoid_cross_entropy(o_final, g, grad);
}

}  // namespace ucrf
