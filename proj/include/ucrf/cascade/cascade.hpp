#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "ucrf/crf/block.hpp"

namespace ucrf {

struct ScaleSettings {
  double sigma_alpha = 60.0;
  double sigma_beta = 5.0;
  double sigma_gamma = 3.0;
  int T = 3;
  MessageSet messages;
};

/// Per-scale settings, scale numbers 1..L (scale 1 has no block).
class ScaleConfig {
 public:
  explicit ScaleConfig(std::size_t scales = 5) : scales_(scales) {}

  std::size_t scale_count() const { return scales_.size(); }
  const ScaleSettings& scale(std::size_t l) const;
  ScaleSettings& scale(std::size_t l);
  /// Sets the message types of every block.
  void set_messages(MessageSet m);

 private:
  std::vector<ScaleSettings> scales_;
};

/// Scales 2..L-1: (60, 5, 3); scale L: (1, 10, 10); T = 3; all messages.
ScaleConfig default_scale_config(std::size_t scales = 5);

class CascadeModel {
 public:
  CascadeModel() = default;
  CascadeModel(ScaleConfig config, std::size_t channels, std::size_t kernel, std::uint64_t seed);

  std::size_t scale_count() const { return config_.scale_count(); }
  std::size_t channels() const { return channels_; }
  std::size_t kernel() const { return kernel_; }
  const ScaleConfig& config() const { return config_; }
  /// Copies bandwidths, T and message types from the config into the blocks.
  void set_config(const ScaleConfig& config);
  void set_messages(MessageSet m);

  /// Block of scale l, 2 <= l <= L.
  CrfBlockParams& block(std::size_t l);
  const CrfBlockParams& block(std::size_t l) const;
  std::vector<CrfBlockParams>& blocks() { return blocks_; }
  const std::vector<CrfBlockParams>& blocks() const { return blocks_; }

  friend bool operator==(const CascadeModel&, const CascadeModel&);

 private:
  ScaleConfig config_;
  std::size_t channels_ = 0;
  std::size_t kernel_ = 3;
  std::vector<CrfBlockParams> blocks_;
};

/// Supplies the Gaussian operators for one image at given bandwidths.
using KernelFactory = std::function<KernelPair(const RgbImage&, double sigma_alpha, double sigma_beta,
                                               double sigma_gamma)>;
/// sigma_beta of the published settings is in 8-bit intensity units.
inline constexpr double kEightBitIntensityScale = 255.0;

/// Unclosed lattice with two offsets: on colour-selective kernels the closed
/// table grows by two orders of magnitude.
LatticeOptions cascade_lattice_options();

KernelFactory lattice_kernel_factory(LatticeOptions opt = {}, double intensity_scale = 1.0);
/// Bilateral kernel: lattice, or exact windowed sums when sigma_alpha is at
/// most window_sigma pixels. Spatial kernel: exact separable filtering, cached
/// per grid size and bandwidth. Safe to share between threads.
KernelFactory auto_kernel_factory(LatticeOptions opt = cascade_lattice_options(), double window_sigma = 2.0,
                                  double intensity_scale = kEightBitIntensityScale);

struct CascadeInputs {
  std::vector<FeatureMap> f;     // f^1..f^L, coarse to fine
  std::vector<PredictionMap> s;  // s^1..s^L, full resolution logits
};

struct CascadeTrace {
  std::vector<FeatureMap> h;     // h^1..h^L
  std::vector<PredictionMap> o;  // o^1..o^L
  std::vector<CrfBlockOutput> blocks;  // scales 2..L
  std::vector<KernelPair> kernels;     // per block

  const PredictionMap& final_map() const { return o.back(); }
};

CascadeTrace cascade_forward(const CascadeInputs& in, const RgbImage& img, const CascadeModel& model,
                             const KernelFactory& kernels = auto_kernel_factory());

struct CascadeGrads {
  std::vector<CrfBlockGrads> blocks;  // scales 2..L
  std::vector<Tensor> f;              // dL/df^l
  std::vector<Tensor> s;              // dL/ds^l
};

/// grad_o[l-1] is the loss gradient on o^l; entries may be empty.
CascadeGrads cascade_backward(const CascadeTrace& trace, const std::vector<Tensor>& grad_o, const CascadeInputs& in,
                              const CascadeModel& model);
/// Gradient on the final map only.
CascadeGrads cascade_backward(const CascadeTrace& trace, const PredictionMap& grad_final, const CascadeInputs& in,
                              const CascadeModel& model);

/// Plain "key value" text, one entry per line, keys kept in insertion order.
class Manifest {
 public:
  void set(const std::string& key, const std::string& value);
  void set(const std::string& key, double value);
  bool has(const std::string& key) const { return index_.count(key) > 0; }
  const std::string& get(const std::string& key) const;
  double get_double(const std::string& key) const;
  long get_int(const std::string& key) const;

  void write(const std::filesystem::path& path) const;
  static Manifest read(const std::filesystem::path& path);

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
  std::map<std::string, std::size_t> index_;
};

inline constexpr int kCheckpointVersion = 1;

/// Writes block tensors into dir and their settings into the manifest.
void save_cascade(const CascadeModel& model, const std::filesystem::path& dir, Manifest& manifest);
/// expected_scales = 0 accepts any scale count.
CascadeModel load_cascade(const std::filesystem::path& dir, const Manifest& manifest, std::size_t expected_scales = 0);

}  // namespace ucrf
