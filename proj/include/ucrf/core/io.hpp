#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ucrf/core/maps.hpp"
#include "ucrf/core/tensor.hpp"

namespace ucrf {

// UCRF1 tensor container:
//   bytes 0..4  magic "UCRF1"
//   u8          rank
//   rank x u32  dims, little-endian
//   payload     product(dims) IEEE-754 float32, little-endian
//
// Values are narrowed to float32 on write; any tensor whose values are
// float32-representable reads back bit-identically.
void write_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor read_tensor(const std::filesystem::path& path);

std::vector<std::uint8_t> encode_tensor(const Tensor& t);
Tensor decode_tensor(const std::vector<std::uint8_t>& bytes);

/// 8-bit grayscale raster.
struct Gray8 {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;
};

// PNG (via libpng) or binary PGM/PPM, chosen by file signature.
RgbImage read_rgb_image(const std::filesystem::path& path);
Gray8 read_gray_image(const std::filesystem::path& path);
GroundTruthMask read_mask(const std::filesystem::path& path);  // >= 128 is foreground

void write_gray_png(const std::filesystem::path& path, const Gray8& img);
void write_rgb_png(const std::filesystem::path& path, const RgbImage& img);
void write_mask_png(const std::filesystem::path& path, const GroundTruthMask& m);

/// round(255 * sigmoid(logit)) per pixel.
Gray8 saliency_to_gray(const PredictionMap& logits);
Gray8 probability_to_gray(const PredictionMap& probs);

}  // namespace ucrf
