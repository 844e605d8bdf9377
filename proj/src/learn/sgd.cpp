#include "ucrf/learn/sgd.hpp"

#include <stdexcept>

#include "ucrf/core/conv.hpp"

namespace ucrf {

void SgdState::step(const std::vector<ParamRef>& params) {
  if (velocity_.empty()) {
    for (const auto& p : params) velocity_.emplace_back(p.value.size(), 0.0);
  } else if (velocity_.size() != params.size()) {
    throw std::logic_error("sgd: parameter list changed between steps");
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    const ParamRef& p = params[k];
    auto& v = velocity_[k];
    if (v.size() != p.value.size() || p.grad.size() != p.value.size())
      throw std::logic_error("sgd: parameter and gradient sizes differ");
    for (std::size_t i = 0; i < v.size(); ++i) {
      v[i] = momentum_ * v[i] - p.lr * (p.grad[i] + p.weight_decay * p.value[i]);
      double x = p.value[i] + v[i];
      if (p.nonnegative && x < 0) x = 0;
      p.value[i] = round_to_float(x);
    }
  }
}

}  // namespace ucrf
