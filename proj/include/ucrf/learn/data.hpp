#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ucrf/core/maps.hpp"

namespace ucrf {

struct Sample {
  std::string name;
  RgbImage image;
  GroundTruthMask mask;
};

/// Flips image and mask together.
Sample augment_hflip(const Sample& s);

struct SynthConfig {
  std::size_t count = 600;
  std::size_t width = 64;
  std::size_t height = 48;
  int min_shapes = 1;
  int max_shapes = 3;
  double min_area = 0.10;  // per shape, fraction of the image
  double max_area = 0.40;
  double min_color_offset = 0.2;  // Euclidean RGB distance to the background mean
  double min_foreground = 0.05;
  double max_foreground = 0.60;

  void validate() const;
};

/// Textured background with 1-3 filled ellipses, rectangles or triangles.
/// Sample i depends only on (seed, i).
Sample synth_sample(const SynthConfig& cfg, std::uint64_t seed, std::size_t index);
std::vector<Sample> synth_generate(const SynthConfig& cfg, std::uint64_t seed);

/// Layout: dir/img/NNNN.png and dir/gt/NNNN.png.
void save_dataset(const std::filesystem::path& dir, const std::vector<Sample>& samples);
/// Loads every img/*.png with a matching gt/*.png, sorted by name.
std::vector<Sample> load_dataset(const std::filesystem::path& dir);

/// Resamples to (width, height): bilinear image, nearest-neighbour mask.
Sample resize_sample(const Sample& s, std::size_t width, std::size_t height);

struct SideOutputs {
  std::vector<FeatureMap> f;     // f^1..f^5
  std::vector<PredictionMap> s;  // s^1..s^5
};

/// Reads f1..f5 and s1..s5 (UCRF1 tensors, .ucrf) from dir. Features are
/// (M, H_l, W_l) with each scale halving the next finer one (rounding up);
/// predictions are (H, W) or (1, H, W) at the image size.
SideOutputs import_side_outputs(const std::filesystem::path& dir, std::size_t image_width, std::size_t image_height,
                                std::size_t scales = 5);
void export_side_outputs(const std::filesystem::path& dir, const SideOutputs& so);

}  // namespace ucrf
