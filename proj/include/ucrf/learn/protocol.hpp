#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "ucrf/learn/checkpoint.hpp"
#include "ucrf/learn/data.hpp"
#include "ucrf/learn/train.hpp"
#include "ucrf/metrics/metrics.hpp"

namespace ucrf {

struct Variant {
  std::string name;  // also the output subdirectory
  MessageSet messages;
};

/// baseline, ss, ff, full and full without feature-prediction messages.
std::vector<Variant> ablation_variants();

/// The synthetic-shapes toy benchmark.
struct ProtocolConfig {
  SynthConfig synth;  // 600 images of 64x48
  std::uint64_t data_seed = 7;
  std::size_t train_count = 500;  // the rest is the test split
  std::size_t channels = 16;
  std::uint64_t backbone_seed = 1;
  std::uint64_t cascade_seed = 11;
  std::size_t kernel = 3;
  TrainConfig stage1 = toy_train_config(1);
  TrainConfig stage2 = toy_train_config(2);
  std::vector<Variant> variants = ablation_variants();
  int jobs = 1;

  void validate() const;
};

struct VariantResult {
  std::string name;
  MessageSet messages;
  double final_loss = 0.0;  // smoothed Stage-2 loss at the last step
  DatasetScore score;
};

struct ProtocolResult {
  std::vector<double> stage1_max_f;  // per side output, scale 1..5
  std::vector<VariantResult> variants;

  const VariantResult& variant(const std::string& name) const;
};

/// Scores the final cascade output (or, with model == nullptr, backbone side
/// output `scale`) on a test split.
DatasetScore score_split(const ToyBackbone& net, const CascadeModel* model, const std::vector<Sample>& test,
                         int jobs = 1, std::size_t scale = 5);

using ProgressFn = std::function<void(const std::string&)>;

/// Stage 1 once, then Stage 2 for every variant from the same start. With a
/// non-empty out_dir, writes out_dir/stage1/ and out_dir/<variant>/
/// (checkpoint, log.csv, scores.csv) plus out_dir/ablation.csv.
ProtocolResult run_protocol(const ProtocolConfig& cfg, const std::vector<Sample>& train,
                            const std::vector<Sample>& test, const std::filesystem::path& out_dir = {},
                            const ProgressFn& progress = {});
/// Same on the configured synthetic data.
ProtocolResult run_protocol(const ProtocolConfig& cfg, const std::filesystem::path& out_dir = {},
                            const ProgressFn& progress = {});

void write_ablation_csv(const std::filesystem::path& path, const ProtocolResult& r);

}  // namespace ucrf
