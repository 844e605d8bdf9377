#include "ucrf/core/io.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <memory>
#include <sstream>
#include <stdexcept>

namespace ucrf {

namespace {

constexpr char kMagic[5] = {'U', 'C', 'R', 'F', '1'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 | std::uint32_t(p[2]) << 16 |
         std::uint32_t(p[3]) << 24;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

}  // namespace

std::vector<std::uint8_t> encode_tensor(const Tensor& t) {
  if (t.rank() > 255) throw std::invalid_argument("tensor rank exceeds 255");
  std::vector<std::uint8_t> out(kMagic, kMagic + 5);
  out.push_back(static_cast<std::uint8_t>(t.rank()));
  for (auto d : t.shape()) {
    if (d > 0xffffffffu) throw std::invalid_argument("tensor dimension exceeds u32");
    put_u32(out, static_cast<std::uint32_t>(d));
  }
  out.reserve(out.size() + 4 * t.size());
  for (double v : t.data()) {
    if (!std::isfinite(v)) throw std::invalid_argument("tensor contains non-finite value");
    put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  }
  return out;
}

Tensor decode_tensor(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 6 || std::memcmp(bytes.data(), kMagic, 5) != 0)
    throw std::runtime_error("bad magic");
  const std::size_t rank = bytes[5];
  std::size_t pos = 6;
  if (bytes.size() < pos + 4 * rank) throw std::runtime_error("truncated header");
  std::vector<std::size_t> shape(rank);
  for (std::size_t i = 0; i < rank; ++i, pos += 4) shape[i] = get_u32(bytes.data() + pos);
  const std::size_t n = shape_product(shape);
  const std::size_t have = (bytes.size() - pos) / 4;
  if (have < n || bytes.size() - pos < 4 * n)
    throw std::runtime_error("truncated: header says " + std::to_string(n) + " values, file has " +
                             std::to_string(have));
  if (bytes.size() - pos != 4 * n)
    throw std::runtime_error("length mismatch: " + std::to_string(bytes.size() - pos - 4 * n) +
                             " trailing bytes");
  std::vector<double> data(n);
  for (std::size_t i = 0; i < n; ++i, pos += 4)
    data[i] = static_cast<double>(std::bit_cast<float>(get_u32(bytes.data() + pos)));
  return Tensor(std::move(shape), std::move(data));
}

void write_tensor(const std::filesystem::path& path, const Tensor& t) {
  const auto bytes = encode_tensor(t);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

Tensor read_tensor(const std::filesystem::path& path) {
  try {
    return decode_tensor(read_file(path));
  } catch (const std::runtime_error& e) {
    throw std::runtime_error(path.filename().string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Raster images

namespace {

struct Raster {
  std::size_t width = 0, height = 0, channels = 0;  // channels: 1 or 3
  std::vector<std::uint8_t> pixels;                  // interleaved
};

struct PngReadGuard {
  png_structp png = nullptr;
  png_infop info = nullptr;
  ~PngReadGuard() { png_destroy_read_struct(&png, info ? &info : nullptr, nullptr); }
};

struct PngWriteGuard {
  png_structp png = nullptr;
  png_infop info = nullptr;
  ~PngWriteGuard() { png_destroy_write_struct(&png, info ? &info : nullptr); }
};

void png_warn_fn(png_structp, png_const_charp) {}

struct MemReader {
  const std::vector<std::uint8_t>* bytes;
  std::size_t pos;
};

void png_mem_read(png_structp png, png_bytep out, png_size_t len) {
  auto* r = static_cast<MemReader*>(png_get_io_ptr(png));
  if (r->pos + len > r->bytes->size()) png_error(png, "truncated png");
  std::memcpy(out, r->bytes->data() + r->pos, len);
  r->pos += len;
}

// libpng reports errors by longjmp; every object with a destructor lives
// outside the setjmp scope.
bool decode_png_into(png_structp png, png_infop info, MemReader* reader, Raster& r,
                     std::vector<png_bytep>& rows) {
  if (setjmp(png_jmpbuf(png))) return false;
  png_set_read_fn(png, reader, png_mem_read);
  png_read_info(png, info);

  const auto color = png_get_color_type(png, info);
  const auto depth = png_get_bit_depth(png, info);
  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);

  r.width = png_get_image_width(png, info);
  r.height = png_get_image_height(png, info);
  r.channels = png_get_channels(png, info);
  if (r.channels != 1 && r.channels != 3) return false;
  r.pixels.resize(r.width * r.height * r.channels);
  rows.resize(r.height);
  for (std::size_t y = 0; y < r.height; ++y) rows[y] = r.pixels.data() + y * r.width * r.channels;
  png_read_image(png, rows.data());
  return true;
}

Raster decode_png(const std::vector<std::uint8_t>& bytes) {
  PngReadGuard g;
  g.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, png_warn_fn);
  if (!g.png) throw std::runtime_error("png: cannot allocate reader");
  g.info = png_create_info_struct(g.png);
  MemReader reader{&bytes, 0};
  Raster r;
  std::vector<png_bytep> rows;
  if (!decode_png_into(g.png, g.info, &reader, r, rows)) throw std::runtime_error("png: decode failed");
  return r;
}

Raster decode_pnm(const std::vector<std::uint8_t>& bytes) {
  std::size_t pos = 2;
  std::vector<long> fields;
  // width, height, maxval separated by whitespace, '#' comments allowed
  while (fields.size() < 3 && pos < bytes.size()) {
    const char c = static_cast<char>(bytes[pos]);
    if (c == '#') {
      while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
    } else if (std::isspace(static_cast<unsigned char>(c))) {
      ++pos;
    } else {
      std::size_t end = pos;
      while (end < bytes.size() && !std::isspace(bytes[end])) ++end;
      fields.push_back(std::stol(std::string(bytes.begin() + pos, bytes.begin() + end)));
      pos = end;
    }
  }
  if (fields.size() != 3 || fields[2] != 255) throw std::runtime_error("pnm: only 8-bit P5/P6 supported");
  ++pos;  // single whitespace after maxval
  Raster r;
  r.channels = bytes[1] == '5' ? 1 : 3;
  r.width = static_cast<std::size_t>(fields[0]);
  r.height = static_cast<std::size_t>(fields[1]);
  const std::size_t n = r.width * r.height * r.channels;
  if (bytes.size() < pos + n) throw std::runtime_error("pnm: truncated");
  r.pixels.assign(bytes.begin() + pos, bytes.begin() + pos + n);
  return r;
}

Raster read_raster(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  try {
    if (bytes.size() >= 8 && png_sig_cmp(bytes.data(), 0, 8) == 0) return decode_png(bytes);
    if (bytes.size() >= 2 && bytes[0] == 'P' && (bytes[1] == '5' || bytes[1] == '6'))
      return decode_pnm(bytes);
  } catch (const std::exception& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
  throw std::runtime_error(path.string() + ": unrecognized image format");
}

bool write_png_rows(png_structp png, png_infop info, FILE* fp, std::size_t w, std::size_t h,
                    int channels, const std::vector<std::uint8_t>& pixels);

void write_png(const std::filesystem::path& path, std::size_t w, std::size_t h, int channels,
               const std::vector<std::uint8_t>& pixels) {
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "wb"), &std::fclose);
  if (!fp) throw std::runtime_error("cannot write " + path.string());
  PngWriteGuard g;
  g.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, png_warn_fn);
  g.info = png_create_info_struct(g.png);
  if (!g.png || !g.info || !write_png_rows(g.png, g.info, fp.get(), w, h, channels, pixels))
    throw std::runtime_error("png: write failed for " + path.string());
}

bool write_png_rows(png_structp png, png_infop info, FILE* fp, std::size_t w, std::size_t h,
                    int channels, const std::vector<std::uint8_t>& pixels) {
  if (setjmp(png_jmpbuf(png))) return false;
  png_init_io(png, fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
               channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t y = 0; y < h; ++y)
    png_write_row(png, const_cast<png_bytep>(pixels.data() + y * w * channels));
  png_write_end(png, nullptr);
  return true;
}

std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

}  // namespace

RgbImage read_rgb_image(const std::filesystem::path& path) {
  const Raster r = read_raster(path);
  RgbImage img(r.width, r.height);
  for (std::size_t y = 0; y < r.height; ++y)
    for (std::size_t x = 0; x < r.width; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        const std::size_t src = (y * r.width + x) * r.channels + (r.channels == 3 ? c : 0);
        img.set(c, y, x, r.pixels[src] / 255.0);
      }
  return img;
}

Gray8 read_gray_image(const std::filesystem::path& path) {
  const Raster r = read_raster(path);
  Gray8 g{r.width, r.height, std::vector<std::uint8_t>(r.width * r.height)};
  for (std::size_t i = 0; i < g.pixels.size(); ++i) {
    if (r.channels == 1) {
      g.pixels[i] = r.pixels[i];
    } else {
      const unsigned sum = r.pixels[3 * i] + r.pixels[3 * i + 1] + r.pixels[3 * i + 2];
      g.pixels[i] = static_cast<std::uint8_t>((sum + 1) / 3);
    }
  }
  return g;
}

GroundTruthMask read_mask(const std::filesystem::path& path) {
  const Gray8 g = read_gray_image(path);
  std::vector<std::uint8_t> v(g.pixels.size());
  std::transform(g.pixels.begin(), g.pixels.end(), v.begin(),
                 [](std::uint8_t p) { return static_cast<std::uint8_t>(p >= 128); });
  return GroundTruthMask(g.width, g.height, std::move(v));
}

void write_gray_png(const std::filesystem::path& path, const Gray8& img) {
  write_png(path, img.width, img.height, 1, img.pixels);
}

void write_rgb_png(const std::filesystem::path& path, const RgbImage& img) {
  std::vector<std::uint8_t> px(img.pixel_count() * 3);
  for (std::size_t y = 0; y < img.height(); ++y)
    for (std::size_t x = 0; x < img.width(); ++x)
      for (std::size_t c = 0; c < 3; ++c) px[(y * img.width() + x) * 3 + c] = to_byte(img.at(c, y, x));
  write_png(path, img.width(), img.height(), 3, px);
}

void write_mask_png(const std::filesystem::path& path, const GroundTruthMask& m) {
  Gray8 g{m.width(), m.height(), std::vector<std::uint8_t>(m.size())};
  for (std::size_t i = 0; i < m.size(); ++i) g.pixels[i] = m[i] ? 255 : 0;
  write_gray_png(path, g);
}

Gray8 probability_to_gray(const PredictionMap& probs) {
  Gray8 g{probs.width(), probs.height(), std::vector<std::uint8_t>(probs.size())};
  for (std::size_t i = 0; i < probs.size(); ++i) g.pixels[i] = to_byte(probs[i]);
  return g;
}

Gray8 saliency_to_gray(const PredictionMap& logits) { return probability_to_gray(sigmoid_map(logits)); }

}  // namespace ucrf
