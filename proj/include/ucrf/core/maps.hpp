#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "ucrf/core/tensor.hpp"

namespace ucrf {

/// RGB image with planar (3, H, W) storage, channel values in [0, 1].
class RgbImage {
 public:
  RgbImage() = default;
  RgbImage(std::size_t width, std::size_t height);
  explicit RgbImage(Tensor pixels);

  std::size_t width() const { return width_; }
  std::size_t height() const { return height_; }
  std::size_t pixel_count() const { return width_ * height_; }
  double at(std::size_t c, std::size_t y, std::size_t x) const { return pixels_.at(c, y, x); }
  void set(std::size_t c, std::size_t y, std::size_t x, double v);
  const Tensor& tensor() const { return pixels_; }

  friend bool operator==(const RgbImage&, const RgbImage&) = default;

 private:
  std::size_t width_ = 0;
  std::size_t height_ = 0;
  Tensor pixels_;
};

/// Multi-channel continuous features at a scale's native resolution.
struct FeatureMap {
  Tensor values;  // (M, H, W)

  FeatureMap() = default;
  explicit FeatureMap(Tensor t);
  FeatureMap(std::size_t channels, std::size_t height, std::size_t width, double fill = 0.0)
      : values(Tensor::chw(channels, height, width, fill)) {}

  std::size_t channels() const { return values.dim(0); }
  std::size_t height() const { return values.dim(1); }
  std::size_t width() const { return values.dim(2); }
};

/// Single-channel logit-valued map at full image resolution.
struct PredictionMap {
  Tensor values;  // (1, H, W)

  PredictionMap() = default;
  explicit PredictionMap(Tensor t);
  PredictionMap(std::size_t height, std::size_t width, double fill = 0.0)
      : values(Tensor::chw(1, height, width, fill)) {}

  std::size_t height() const { return values.dim(1); }
  std::size_t width() const { return values.dim(2); }
  std::size_t size() const { return values.size(); }
  double& operator[](std::size_t i) { return values[i]; }
  double operator[](std::size_t i) const { return values[i]; }
  double& at(std::size_t y, std::size_t x) { return values.at(0, y, x); }
  double at(std::size_t y, std::size_t x) const { return values.at(0, y, x); }
};

/// Binary mask, values exactly 0 or 1.
class GroundTruthMask {
 public:
  GroundTruthMask() = default;
  GroundTruthMask(std::size_t width, std::size_t height, std::vector<std::uint8_t> values);

  std::size_t width() const { return width_; }
  std::size_t height() const { return height_; }
  std::size_t size() const { return values_.size(); }
  std::uint8_t operator[](std::size_t i) const { return values_[i]; }
  std::uint8_t at(std::size_t y, std::size_t x) const { return values_[y * width_ + x]; }
  const std::vector<std::uint8_t>& values() const { return values_; }
  std::size_t foreground_count() const;

  friend bool operator==(const GroundTruthMask&, const GroundTruthMask&) = default;

 private:
  std::size_t width_ = 0;
  std::size_t height_ = 0;
  std::vector<std::uint8_t> values_;
};

PredictionMap sigmoid_map(const PredictionMap& m);
/// Clamps to [epsilon, 1 - epsilon] before taking log(p / (1 - p)).
PredictionMap logit_map(const PredictionMap& p, double epsilon = 1e-4);

double sigmoid(double x);

/// Bilinear resampling with half-pixel centers (align-corners false) over
/// the two trailing axes of a rank-2 or rank-3 tensor.
Tensor bilinear_resize(const Tensor& t, std::size_t new_w, std::size_t new_h);

/// Adjoint of bilinear_resize: maps a gradient at the resized shape back to
/// the source shape (in_w, in_h).
Tensor bilinear_resize_adjoint(const Tensor& grad, std::size_t in_w, std::size_t in_h);

Tensor hflip(const Tensor& t);
RgbImage hflip(const RgbImage& img);
GroundTruthMask hflip(const GroundTruthMask& m);

}  // namespace ucrf
