#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "ucrf/core/maps.hpp"
#include "ucrf/core/tensor.hpp"
#include "ucrf/lattice/pairwise.hpp"
#include "ucrf/lattice/permutohedral.hpp"

namespace ucrf {

/// Which message types a block passes: feature-feature (W), feature-prediction
/// (V) and prediction-prediction (the Gaussian mean-field).
struct MessageSet {
  bool ff = true;
  bool fs = true;
  bool ss = true;

  static MessageSet all() { return {}; }
  static MessageSet none() { return {false, false, false}; }
  /// Comma-separated subset of "ff,fs,ss"; "none" or "" for the empty set.
  static MessageSet parse(const std::string& text);
  std::string str() const;

  friend bool operator==(const MessageSet&, const MessageSet&) = default;
};

struct CrfBlockParams {
  Tensor W;          // (M, M, k, k), applied to h^{l-1}
  Tensor V;          // (M, M, k, k), applied to M copies of o^{l-1}
  Tensor inv_alpha;  // (M), per-channel 1/alpha
  Tensor head;       // (1, M), 1x1 prediction head
  double beta1 = 0.1;
  double beta2 = 0.1;
  double sigma_alpha = 60.0;
  double sigma_beta = 5.0;
  double sigma_gamma = 3.0;
  int T = 3;
  MessageSet messages;

  std::size_t channels() const { return inv_alpha.size(); }
  void validate() const;
};

/// Fan-in scaled uniform W and V, inv_alpha = 0, beta = 0.1, uniform head.
CrfBlockParams init_block_params(std::size_t channels, std::size_t kernel, std::uint64_t seed);

/// Gaussian operators for K1 (bilateral) and K2 (spatial) over one image.
struct KernelPair {
  KernelPair() = default;
  KernelPair(std::shared_ptr<const PairwiseOperator> a, std::shared_ptr<const PairwiseOperator> b)
      : k1(std::move(a)), k2(std::move(b)) {}

  std::shared_ptr<const PairwiseOperator> k1;
  std::shared_ptr<const PairwiseOperator> k2;
  // Optional precomputed kernel_row_sums() of k1 and k2.
  Tensor rows1, rows2;

  void cache_row_sums();
};

KernelPair build_lattice_kernels(const RgbImage& img, double sigma_alpha, double sigma_beta,
                                 double sigma_gamma, const LatticeOptions& opt = {},
                                 double intensity_scale = 1.0);
KernelPair build_dense_kernels(const RgbImage& img, double sigma_alpha, double sigma_beta,
                               double sigma_gamma, double intensity_scale = 1.0);

FeatureMap estimate_features(const FeatureMap& f, const FeatureMap& h_prev, const PredictionMap& o_prev,
                             const CrfBlockParams& p);

/// 1x1 convolution to one channel, bilinearly resized to (out_h, out_w).
PredictionMap prediction_head(const FeatureMap& h, const CrfBlockParams& p, std::size_t out_h,
                              std::size_t out_w);

PredictionMap fuse_observation(const PredictionMap& s_head, const PredictionMap& o_prev);

/// rho_i = 1 + 2 (beta1 sum_{j!=i} K1_ij + beta2 sum_{j!=i} K2_ij).
Tensor compute_rho(const PairwiseOperator& k1, const PairwiseOperator& k2, double beta1, double beta2);

struct MeanfieldResult {
  PredictionMap mu;
  std::vector<Tensor> trace;  // mu_0 .. mu_T
};

MeanfieldResult meanfield_iterate(const PredictionMap& s_obs, const PairwiseOperator& k1,
                                  const PairwiseOperator& k2, double beta1, double beta2, int T);

/// Direct dense solve of (diag(rho) - 2 beta1 K1 - 2 beta2 K2) mu = s_obs.
PredictionMap fixed_point_oracle(const PredictionMap& s_obs, const EmbeddingSet& emb1,
                                 const EmbeddingSet& emb2, double beta1, double beta2);
/// Same solve over the explicit matrices of two operators (materialized by
/// applying them to unit vectors).
PredictionMap fixed_point_oracle(const PredictionMap& s_obs, const PairwiseOperator& k1,
                                 const PairwiseOperator& k2, double beta1, double beta2);

/// Everything the backward pass needs.
struct CrfBlockOutput {
  FeatureMap h;
  PredictionMap o;
  PredictionMap s_obs;
  std::vector<Tensor> mu_trace;

  Tensor msg;        // (M, H, W) upsampled W and V messages, before inv_alpha
  Tensor delta;      // inv_alpha * msg = h - f
  Tensor o_small;    // o^{l-1} resized to the h^{l-1} grid
  Tensor rho;
  Tensor rows1, rows2;
  std::vector<Tensor> p1mu, p2mu;  // pairwise sums of mu_0 .. mu_{T-1}
};

/// s_head = s + prediction_head(h - f): the block's head refines the scale's
/// own side output by the change the messages made to its features, so with
/// feature messages off it reproduces s exactly.
CrfBlockOutput crf_block_forward(const FeatureMap& f, const PredictionMap& s, const FeatureMap& h_prev,
                                 const PredictionMap& o_prev, const KernelPair& kernels,
                                 const CrfBlockParams& p);

CrfBlockOutput crf_block_forward(const FeatureMap& f, const PredictionMap& s, const FeatureMap& h_prev,
                                 const PredictionMap& o_prev, const RgbImage& img, const CrfBlockParams& p);

struct CrfBlockGrads {
  Tensor W, V, inv_alpha, head;
  double beta1 = 0.0;
  double beta2 = 0.0;

  Tensor f, s, h_prev, o_prev;  // input gradients

  explicit CrfBlockGrads(const CrfBlockParams& p);
  CrfBlockGrads() = default;
};

/// grad_h may be empty (no downstream use of h).
CrfBlockGrads crf_block_backward(const CrfBlockOutput& out, const PredictionMap& grad_o, const Tensor& grad_h,
                                 const FeatureMap& f, const FeatureMap& h_prev, const PredictionMap& o_prev,
                                 const KernelPair& kernels, const CrfBlockParams& p);

}  // namespace ucrf
