#include "ucrf/metrics/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "ucrf/core/parallel.hpp"

namespace ucrf {

namespace {

void check_shape(std::size_t w, std::size_t h, const GroundTruthMask& gt) {
  if (w != gt.width() || h != gt.height())
    throw std::invalid_argument("metrics: saliency map " + std::to_string(w) + "x" + std::to_string(h) +
                                " does not match ground truth " + std::to_string(gt.width()) + "x" +
                                std::to_string(gt.height()));
}

}  // namespace

PrCurve pr_curve(const Gray8& sal, const GroundTruthMask& gt) {
  check_shape(sal.width, sal.height, gt);
  const std::size_t fg = gt.foreground_count();
  if (fg == 0) throw std::invalid_argument("pr_curve: ground truth has no foreground");
  // Histograms of saliency values over foreground and background pixels.
  std::array<std::size_t, kThresholds> hist_fg{}, hist_bg{};
  for (std::size_t i = 0; i < sal.pixels.size(); ++i) (gt[i] ? hist_fg : hist_bg)[sal.pixels[i]]++;
  PrCurve c;
  std::size_t tp = 0, fp = 0;
  for (std::size_t t = kThresholds; t-- > 0;) {
    tp += hist_fg[t];
    fp += hist_bg[t];
    c.precision[t] = tp + fp == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
    c.recall[t] = static_cast<double>(tp) / static_cast<double>(fg);
  }
  return c;
}

double f_measure(double p, double r, double b2) {
  const double num = (1 + b2) * p * r;
  return num == 0 ? 0.0 : num / (b2 * p + r);
}

double max_f_measure(const PrCurve& curve, double b2) {
  double best = 0.0;
  for (std::size_t t = 0; t < kThresholds; ++t) best = std::max(best, f_measure(curve.precision[t], curve.recall[t], b2));
  return best;
}

double mae(const PredictionMap& sal, const GroundTruthMask& gt) {
  check_shape(sal.width(), sal.height(), gt);
  double acc = 0;
  for (std::size_t i = 0; i < sal.size(); ++i) acc += std::abs(sal[i] - gt[i]);
  return acc / static_cast<double>(sal.size());
}

double mae(const Gray8& sal, const GroundTruthMask& gt) {
  check_shape(sal.width, sal.height, gt);
  std::uint64_t acc = 0;
  for (std::size_t i = 0; i < sal.pixels.size(); ++i) acc += gt[i] ? 255u - sal.pixels[i] : sal.pixels[i];
  return static_cast<double>(acc) / (255.0 * static_cast<double>(sal.pixels.size()));
}

DatasetScore evaluate_dataset(const std::vector<EvalItem>& items, int jobs) {
  if (items.empty()) throw std::invalid_argument("evaluate_dataset: no images");
  DatasetScore d;
  d.images.resize(items.size());
  std::vector<PrCurve> curves(items.size());
  parallel_for(items.size(), jobs, [&](std::size_t i) {
    curves[i] = pr_curve(items[i].sal, items[i].gt);
    d.images[i] = {items[i].name, max_f_measure(curves[i]), mae(items[i].sal, items[i].gt)};
  });
  // Sequential reduction keeps the sums independent of the job count.
  const double n = static_cast<double>(items.size());
  for (std::size_t i = 0; i < items.size(); ++i) {
    for (std::size_t t = 0; t < kThresholds; ++t) {
      d.mean_curve.precision[t] += curves[i].precision[t] / n;
      d.mean_curve.recall[t] += curves[i].recall[t] / n;
    }
    d.mean_image_max_f += d.images[i].max_f / n;
    d.mean_mae += d.images[i].mae / n;
  }
  d.max_f = max_f_measure(d.mean_curve);
  return d;
}

void write_scores_csv(const std::filesystem::path& path, const DatasetScore& s) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << "image,max_f,mae\n";
  char buf[256];
  for (const auto& r : s.images) {
    std::snprintf(buf, sizeof buf, ",%.6f,%.6f\n", r.max_f, r.mae);
    os << r.name << buf;
  }
  std::snprintf(buf, sizeof buf, "mean,%.6f,%.6f\n", s.mean_image_max_f, s.mean_mae);
  os << buf;
  std::snprintf(buf, sizeof buf, "curve_of_means,%.6f,%.6f\n", s.max_f, s.mean_mae);
  os << buf;
}

void write_curve_csv(const std::filesystem::path& path, const PrCurve& c) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << "threshold,precision,recall,f\n";
  char buf[128];
  for (std::size_t t = 0; t < kThresholds; ++t) {
    std::snprintf(buf, sizeof buf, "%zu,%.6f,%.6f,%.6f\n", t, c.precision[t], c.recall[t],
                  f_measure(c.precision[t], c.recall[t]));
    os << buf;
  }
}

}  // namespace ucrf
