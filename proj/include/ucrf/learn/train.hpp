#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "ucrf/cascade/cascade.hpp"
#include "ucrf/learn/backbone.hpp"
#include "ucrf/learn/data.hpp"
#include "ucrf/learn/sgd.hpp"

namespace ucrf {

struct TrainConfig {
  int stage = 1;
  double learning_rate = 1e-3;
  double beta_learning_rate = 1e-2;  // stage 2 only
  double alpha_learning_rate = 0.0;  // stage 2 inv_alpha; 0 means learning_rate
  double momentum = 0.9;
  double weight_decay = 5e-4;
  int iter_size = 1;  // samples averaged per optimizer step
  int max_iter = 2000;
  int epochs = 0;     // when > 0, overrides max_iter: epochs * samples / iter_size steps
  std::uint64_t seed = 1;
  bool flip = true;
  int plateau_patience = 0;  // steps without improvement before decay; 0 disables
  double plateau_factor = 0.9;

  void validate() const;
  int steps_for(std::size_t samples) const;
};

/// The published optimizer settings (batch 1, iter_size 10, momentum 0.9,
/// weight decay 5e-4; lr 1e-9 / 1e-12 with 1e-8 for beta). They assume
/// unnormalised per-pixel loss sums over a VGG backbone.
TrainConfig published_train_config(int stage);
/// Rescaled for the toy backbone and mean-per-pixel losses. inv_alpha trains
/// at the base rate: faster rates (1e-3, 1e-2) made the message variants
/// diverge late in stage 2.
TrainConfig toy_train_config(int stage);

struct LogRow {
  int iter = 0;
  int stage = 0;
  double loss = 0.0;  // mean per pixel, averaged over the step's samples
  double lr = 0.0;
};

void write_log_csv(const std::filesystem::path& path, const std::vector<LogRow>& log);
/// Trailing moving average of the loss column.
std::vector<double> smoothed_loss(const std::vector<LogRow>& log, std::size_t window = 20);

/// Deterministic sample order: a fresh permutation per epoch and a coin flip
/// per draw when flipping is enabled.
class SampleStream {
 public:
  SampleStream(const std::vector<Sample>& data, std::uint64_t seed, bool flip);
  Sample next();

 private:
  const std::vector<Sample>& data_;
  std::mt19937_64 rng_;
  bool flip_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
};

/// Deep supervision of all side outputs.
std::vector<LogRow> train_stage1(ToyBackbone& net, const std::vector<Sample>& data, const TrainConfig& cfg);

/// Copies each scale's side-head weights into the block heads.
void init_heads_from_backbone(const ToyBackbone& net, CascadeModel& model);

/// One jointly trained backbone + cascade.
struct Stage2Run {
  std::string name;
  ToyBackbone net;
  CascadeModel model;
  std::vector<LogRow> log;
};

/// Trains every run on the same sample sequence. Runs only differ in their
/// starting parameters and message switches; kernels are built once per
/// sample and shared. Runs are distributed over `jobs` threads.
void train_stage2(std::vector<Stage2Run>& runs, const std::vector<Sample>& data, const TrainConfig& cfg,
                  const KernelFactory& kernels = auto_kernel_factory(), int jobs = 1);

/// o^L logits of the full model.
PredictionMap predict(const ToyBackbone& net, const CascadeModel& model, const RgbImage& img,
                      const KernelFactory& kernels = auto_kernel_factory());

}  // namespace ucrf
