#pragma once

#include <span>
#include <vector>

namespace ucrf {

/// One learnable array with its gradient and per-array settings.
struct ParamRef {
  std::span<double> value;
  std::span<const double> grad;
  double lr = 0.0;
  double weight_decay = 0.0;
  bool nonnegative = false;
};

/// Classical momentum:
///   v <- momentum * v - lr * (grad + weight_decay * value);  value <- value + v
/// Values are clamped at zero when requested and rounded to float32.
class SgdState {
 public:
  explicit SgdState(double momentum = 0.9) : momentum_(momentum) {}

  /// The parameter list must keep the same layout across calls.
  void step(const std::vector<ParamRef>& params);
  double momentum() const { return momentum_; }
  const std::vector<std::vector<double>>& velocity() const { return velocity_; }

 private:
  double momentum_;
  std::vector<std::vector<double>> velocity_;
};

}  // namespace ucrf
