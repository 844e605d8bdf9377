#include "ucrf/learn/train.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <stdexcept>
#include <tuple>

#include "ucrf/core/parallel.hpp"
#include "ucrf/learn/loss.hpp"

namespace ucrf {

void TrainConfig::validate() const {
  if (stage != 1 && stage != 2) throw std::invalid_argument("train: stage must be 1 or 2");
  if (!(learning_rate > 0) || (stage == 2 && !(beta_learning_rate > 0)))
    throw std::invalid_argument("train: learning rates must be positive");
  if (!(momentum >= 0 && momentum < 1)) throw std::invalid_argument("train: momentum must be in [0, 1)");
  if (weight_decay < 0) throw std::invalid_argument("train: weight decay must be nonnegative");
  if (alpha_learning_rate < 0) throw std::invalid_argument("train: alpha learning rate must be nonnegative");
  if (iter_size < 1) throw std::invalid_argument("train: iter_size must be >= 1");
  if (max_iter < 1 && epochs < 1) throw std::invalid_argument("train: need max_iter or epochs");
  if (plateau_patience < 0 || !(plateau_factor > 0 && plateau_factor <= 1))
    throw std::invalid_argument("train: bad plateau settings");
}

int TrainConfig::steps_for(std::size_t samples) const {
  if (epochs > 0) return std::max<int>(1, static_cast<int>(static_cast<std::size_t>(epochs) * samples / iter_size));
  return max_iter;
}

TrainConfig published_train_config(int stage) {
  TrainConfig c;
  c.stage = stage;
  c.learning_rate = stage == 1 ? 1e-9 : 1e-12;
  c.beta_learning_rate = 1e-8;
  c.iter_size = 10;
  c.max_iter = 14000;
  c.epochs = stage == 1 ? 0 : 10;
  return c;
}

TrainConfig toy_train_config(int stage) {
  TrainConfig c;
  c.stage = stage;
  c.learning_rate = stage == 1 ? 1e-3 : 1e-4;
  c.beta_learning_rate = 1e-2;
  c.iter_size = 1;
  c.max_iter = 2000;
  c.epochs = stage == 1 ? 0 : 10;
  return c;
}

void write_log_csv(const std::filesystem::path& path, const std::vector<LogRow>& log) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << "iter,stage,loss,lr\n";
  char buf[128];
  for (const auto& r : log) {
    std::snprintf(buf, sizeof buf, "%d,%d,%.9g,%.9g\n", r.iter, r.stage, r.loss, r.lr);
    os << buf;
  }
}

std::vector<double> smoothed_loss(const std::vector<LogRow>& log, std::size_t window) {
  std::vector<double> out(log.size());
  double acc = 0;
  for (std::size_t i = 0; i < log.size(); ++i) {
    acc += log[i].loss;
    if (i >= window) acc -= log[i - window].loss;
    out[i] = acc / static_cast<double>(std::min(i + 1, window));
  }
  return out;
}

SampleStream::SampleStream(const std::vector<Sample>& data, std::uint64_t seed, bool flip)
    : data_(data), rng_(seed), flip_(flip), order_(data.size()) {
  if (data.empty()) throw std::invalid_argument("train: empty dataset");
  pos_ = order_.size();
}

Sample SampleStream::next() {
  if (pos_ == order_.size()) {
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    // Fisher-Yates with explicit draws keeps the order identical across
    // standard library implementations.
    for (std::size_t i = order_.size(); i > 1; --i) std::swap(order_[i - 1], order_[rng_() % i]);
    pos_ = 0;
  }
  const Sample& s = data_[order_[pos_++]];
  if (flip_ && (rng_() & 1)) return augment_hflip(s);
  return s;
}

namespace {

void add_params(std::vector<ParamRef>& out, Tensor& v, const Tensor& g, double lr, double wd) {
  out.push_back({v.data(), g.data(), lr, wd, false});
}

std::vector<ParamRef> backbone_params(ToyBackbone& net, const ToyBackbone& g, double lr, double wd) {
  std::vector<ParamRef> p;
  for (std::size_t k = 0; k < ToyBackbone::kStages; ++k) {
    add_params(p, net.conv_w[k], g.conv_w[k], lr, wd);
    add_params(p, net.conv_b[k], g.conv_b[k], lr, 0.0);
    add_params(p, net.head_w[k], g.head_w[k], lr, wd);
    add_params(p, net.head_b[k], g.head_b[k], lr, 0.0);
  }
  return p;
}

void scale_grads(ToyBackbone& g, double s) {
  for (std::size_t k = 0; k < ToyBackbone::kStages; ++k)
    for (Tensor* t : {&g.conv_w[k], &g.conv_b[k], &g.head_w[k], &g.head_b[k]}) *t *= s;
}

struct BlockGradAcc {
  Tensor W, V, inv_alpha, head;
  double beta[2] = {0, 0};
};

std::vector<BlockGradAcc> zero_block_grads(const CascadeModel& m) {
  std::vector<BlockGradAcc> g;
  for (const auto& b : m.blocks())
    g.push_back({Tensor(b.W.shape()), Tensor(b.V.shape()), Tensor(b.inv_alpha.shape()), Tensor(b.head.shape()), {0, 0}});
  return g;
}

std::vector<ParamRef> cascade_params(CascadeModel& m, std::vector<BlockGradAcc>& g, const TrainConfig& cfg,
                                     double lr_scale) {
  std::vector<ParamRef> p;
  const double lr = cfg.learning_rate * lr_scale, blr = cfg.beta_learning_rate * lr_scale;
  const double alr = (cfg.alpha_learning_rate > 0 ? cfg.alpha_learning_rate : cfg.learning_rate) * lr_scale;
  for (std::size_t i = 0; i < m.blocks().size(); ++i) {
    auto& b = m.blocks()[i];
    add_params(p, b.W, g[i].W, lr, cfg.weight_decay);
    add_params(p, b.V, g[i].V, lr, cfg.weight_decay);
    add_params(p, b.inv_alpha, g[i].inv_alpha, alr, 0.0);
    add_params(p, b.head, g[i].head, lr, cfg.weight_decay);
    p.push_back({std::span<double>(&b.beta1, 1), std::span<const double>(&g[i].beta[0], 1), blr, 0.0, true});
    p.push_back({std::span<double>(&b.beta2, 1), std::span<const double>(&g[i].beta[1], 1), blr, 0.0, true});
  }
  return p;
}

// Learning-rate multiplier driven by the plateau rule.
class Plateau {
 public:
  Plateau(int patience, double factor) : patience_(patience), factor_(factor) {}
  double scale() const { return scale_; }
  void observe(double smoothed) {
    if (patience_ == 0) return;
    if (smoothed < best_) {
      best_ = smoothed;
      since_ = 0;
    } else if (++since_ >= patience_) {
      scale_ *= factor_;
      since_ = 0;
      best_ = smoothed;
    }
  }

 private:
  int patience_;
  double factor_;
  double scale_ = 1.0;
  double best_ = std::numeric_limits<double>::infinity();
  int since_ = 0;
};

double smoothed_tail(const std::vector<LogRow>& log, std::size_t window = 20) {
  const std::size_t n = std::min(window, log.size());
  double acc = 0;
  for (std::size_t i = log.size() - n; i < log.size(); ++i) acc += log[i].loss;
  return acc / static_cast<double>(n);
}

}  // namespace

std::vector<LogRow> train_stage1(ToyBackbone& net, const std::vector<Sample>& data, const TrainConfig& cfg) {
  cfg.validate();
  if (cfg.stage != 1) throw std::invalid_argument("train_stage1: config is for stage 2");
  SampleStream stream(data, cfg.seed, cfg.flip);
  SgdState opt(cfg.momentum);
  Plateau plateau(cfg.plateau_patience, cfg.plateau_factor);
  std::vector<LogRow> log;
  const int steps = cfg.steps_for(data.size());
  for (int it = 1; it <= steps; ++it) {
    ToyBackbone g = zero_like(net);
    double loss = 0;
    for (int k = 0; k < cfg.iter_size; ++k) {
      const Sample s = stream.next();
      const BackboneTrace tr = backbone_forward(net, s.image);
      std::vector<Tensor> gs;
      const double n = static_cast<double>(s.mask.size());
      loss += stage1_loss(tr.s, s.mask, &gs) / n;
      for (auto& t : gs) t *= 1.0 / n;
      backbone_backward(net, tr, std::vector<Tensor>(ToyBackbone::kStages), gs, g);
    }
    scale_grads(g, 1.0 / cfg.iter_size);
    const double lr = cfg.learning_rate * plateau.scale();
    opt.step(backbone_params(net, g, lr, cfg.weight_decay));
    log.push_back({it, 1, loss / cfg.iter_size, lr});
    plateau.observe(smoothed_tail(log));
  }
  return log;
}

void init_heads_from_backbone(const ToyBackbone& net, CascadeModel& model) {
  if (model.channels() != net.channels || model.scale_count() != ToyBackbone::kStages)
    throw std::invalid_argument("init_heads_from_backbone: model and backbone do not match");
  for (std::size_t l = 2; l <= model.scale_count(); ++l) model.block(l).head = net.head_w[l - 1];
}

namespace {

struct RunState {
  Stage2Run* run;
  SgdState opt_net, opt_model;
  Plateau plateau;
  ToyBackbone g_net;
  std::vector<BlockGradAcc> g_model;
  double loss = 0;
};

void stage2_sample(RunState& st, const Sample& s, const KernelFactory& kernels) {
  Stage2Run& run = *st.run;
  const BackboneTrace bt = backbone_forward(run.net, s.image);
  const CascadeInputs in{bt.f, bt.s};
  const CascadeTrace ct = cascade_forward(in, s.image, run.model, kernels);
  Tensor grad;
  const double n = static_cast<double>(s.mask.size());
  st.loss += stage2_loss(ct.final_map(), s.mask, &grad) / n;
  grad *= 1.0 / n;
  const CascadeGrads cg = cascade_backward(ct, PredictionMap(std::move(grad)), in, run.model);
  for (std::size_t i = 0; i < cg.blocks.size(); ++i) {
    auto& a = st.g_model[i];
    const auto& b = cg.blocks[i];
    a.W += b.W;
    a.V += b.V;
    a.inv_alpha += b.inv_alpha;
    a.head += b.head;
    a.beta[0] += b.beta1;
    a.beta[1] += b.beta2;
  }
  backbone_backward(run.net, bt, cg.f, cg.s, st.g_net);
}

}  // namespace

void train_stage2(std::vector<Stage2Run>& runs, const std::vector<Sample>& data, const TrainConfig& cfg,
                  const KernelFactory& kernels, int jobs) {
  cfg.validate();
  if (cfg.stage != 2) throw std::invalid_argument("train_stage2: config is for stage 1");
  if (runs.empty()) return;
  std::vector<RunState> states;
  for (auto& r : runs) {
    if (r.model.scale_count() != ToyBackbone::kStages || r.model.channels() != r.net.channels)
      throw std::invalid_argument("train_stage2: run '" + r.name + "' does not match the backbone");
    states.push_back({&r, SgdState(cfg.momentum), SgdState(cfg.momentum),
                      Plateau(cfg.plateau_patience, cfg.plateau_factor), {}, {}, 0});
  }

  SampleStream stream(data, cfg.seed, cfg.flip);
  const int steps = cfg.steps_for(data.size());
  for (int it = 1; it <= steps; ++it) {
    for (auto& st : states) {
      st.g_net = zero_like(st.run->net);
      st.g_model = zero_block_grads(st.run->model);
      st.loss = 0;
    }
    for (int k = 0; k < cfg.iter_size; ++k) {
      const Sample s = stream.next();
      // Build each needed kernel pair once for all runs.
      std::map<std::tuple<double, double, double>, KernelPair> shared;
      for (const auto& st : states)
        for (const auto& b : st.run->model.blocks())
          if (b.messages.ss) {
            auto key = std::make_tuple(b.sigma_alpha, b.sigma_beta, b.sigma_gamma);
            if (!shared.count(key)) {
              KernelPair kp = kernels(s.image, b.sigma_alpha, b.sigma_beta, b.sigma_gamma);
              kp.cache_row_sums();
              shared.emplace(key, std::move(kp));
            }
          }
      const KernelFactory lookup = [&shared](const RgbImage&, double a, double b, double g) {
        return shared.at(std::make_tuple(a, b, g));
      };
      parallel_for(states.size(), jobs, [&](std::size_t i) { stage2_sample(states[i], s, lookup); });
    }
    parallel_for(states.size(), jobs, [&](std::size_t i) {
      RunState& st = states[i];
      const double inv = 1.0 / cfg.iter_size;
      scale_grads(st.g_net, inv);
      for (auto& a : st.g_model) {
        a.W *= inv;
        a.V *= inv;
        a.inv_alpha *= inv;
        a.head *= inv;
        a.beta[0] *= inv;
        a.beta[1] *= inv;
      }
      const double scale = st.plateau.scale();
      st.opt_net.step(backbone_params(st.run->net, st.g_net, cfg.learning_rate * scale, cfg.weight_decay));
      st.opt_model.step(cascade_params(st.run->model, st.g_model, cfg, scale));
      st.run->log.push_back({it, 2, st.loss / cfg.iter_size, cfg.learning_rate * scale});
      st.plateau.observe(smoothed_tail(st.run->log));
    });
  }
}

PredictionMap predict(const ToyBackbone& net, const CascadeModel& model, const RgbImage& img,
                      const KernelFactory& kernels) {
  const BackboneTrace bt = backbone_forward(net, img);
  return cascade_forward(CascadeInputs{bt.f, bt.s}, img, model, kernels).final_map();
}

}  // namespace ucrf
