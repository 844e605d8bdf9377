#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "ucrf/core/io.hpp"
#include "ucrf/core/maps.hpp"

namespace ucrf {

inline constexpr double kBetaSquared = 0.3;
inline constexpr std::size_t kThresholds = 256;

/// Precision and recall at thresholds t = 0..255, positive where sal >= t.
struct PrCurve {
  std::array<double, kThresholds> precision{};
  std::array<double, kThresholds> recall{};
};

/// When nothing is predicted positive, precision is 1.
PrCurve pr_curve(const Gray8& sal, const GroundTruthMask& gt);

/// (1 + b^2) P R / (b^2 P + R), 0 when P = R = 0.
double f_measure(double precision, double recall, double beta_squared = kBetaSquared);
double max_f_measure(const PrCurve& curve, double beta_squared = kBetaSquared);

/// Mean absolute difference; sal holds probabilities in [0, 1].
double mae(const PredictionMap& sal, const GroundTruthMask& gt);
/// Same on an 8-bit map, scaled by 1/255.
double mae(const Gray8& sal, const GroundTruthMask& gt);

struct ImageScore {
  std::string name;
  double max_f = 0.0;
  double mae = 0.0;
};

struct DatasetScore {
  std::vector<ImageScore> images;
  PrCurve mean_curve;          // precision and recall averaged per threshold
  double max_f = 0.0;          // max-F of mean_curve
  double mean_image_max_f = 0.0;
  double mean_mae = 0.0;
};

struct EvalItem {
  std::string name;
  Gray8 sal;
  GroundTruthMask gt;
};

DatasetScore evaluate_dataset(const std::vector<EvalItem>& items, int jobs = 1);

/// Per-image rows then a "mean" summary row.
void write_scores_csv(const std::filesystem::path& path, const DatasetScore& score);
void write_curve_csv(const std::filesystem::path& path, const PrCurve& curve);

}  // namespace ucrf
