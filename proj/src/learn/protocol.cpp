#include "ucrf/learn/protocol.hpp"

#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "ucrf/core/io.hpp"
#include "ucrf/core/parallel.hpp"

namespace ucrf {

std::vector<Variant> ablation_variants() {
  return {{"baseline", MessageSet::none()},
          {"ss", MessageSet::parse("ss")},
          {"ff", MessageSet::parse("ff")},
          {"full", MessageSet::all()},
          {"full_no_fs", MessageSet::parse("ff,ss")}};
}

void ProtocolConfig::validate() const {
  synth.validate();
  if (train_count == 0 || train_count >= synth.count)
    throw std::invalid_argument("protocol: train_count must leave a nonempty test split");
  if (channels == 0) throw std::invalid_argument("protocol: channels must be positive");
  if (variants.empty()) throw std::invalid_argument("protocol: no variants");
  if (stage1.stage != 1 || stage2.stage != 2) throw std::invalid_argument("protocol: stage configs swapped");
  stage1.validate();
  stage2.validate();
}

const VariantResult& ProtocolResult::variant(const std::string& name) const {
  for (const auto& v : variants)
    if (v.name == name) return v;
  throw std::out_of_range("protocol: no variant " + name);
}

DatasetScore score_split(const ToyBackbone& net, const CascadeModel* model, const std::vector<Sample>& test,
                         int jobs, std::size_t scale) {
  std::vector<EvalItem> items(test.size());
  parallel_for(test.size(), jobs, [&](std::size_t i) {
    const PredictionMap p =
        model ? predict(net, *model, test[i].image) : backbone_forward(net, test[i].image).s.at(scale - 1);
    items[i] = {test[i].name, saliency_to_gray(p), test[i].mask};
  });
  return evaluate_dataset(items, jobs);
}

void write_ablation_csv(const std::filesystem::path& path, const ProtocolResult& r) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << "variant,messages,max_f,mean_image_max_f,mae,final_loss\n";
  char buf[256];
  for (const auto& v : r.variants) {
    std::snprintf(buf, sizeof buf, ",%.6f,%.6f,%.6f,%.6f\n", v.score.max_f, v.score.mean_image_max_f,
                  v.score.mean_mae, v.final_loss);
    os << v.name << ',' << v.messages.str() << buf;
  }
}

ProtocolResult run_protocol(const ProtocolConfig& cfg, const std::vector<Sample>& train,
                            const std::vector<Sample>& test, const std::filesystem::path& out_dir,
                            const ProgressFn& progress) {
  cfg.validate();
  if (train.empty() || test.empty()) throw std::invalid_argument("protocol: empty split");
  auto say = [&](const std::string& s) {
    if (progress) progress(s);
  };
  const bool write = !out_dir.empty();
  if (write) std::filesystem::create_directories(out_dir);

  ProtocolResult res;
  ToyBackbone net = init_backbone(cfg.channels, cfg.backbone_seed);
  say("stage 1: " + std::to_string(cfg.stage1.steps_for(train.size())) + " steps");
  const auto log1 = train_stage1(net, train, cfg.stage1);
  for (std::size_t l = 1; l <= ToyBackbone::kStages; ++l)
    res.stage1_max_f.push_back(score_split(net, nullptr, test, cfg.jobs, l).max_f);
  if (write) {
    save_checkpoint(out_dir / "stage1", {1, net, std::nullopt});
    write_log_csv(out_dir / "stage1" / "log.csv", log1);
  }

  std::vector<Stage2Run> runs;
  for (const auto& v : cfg.variants) {
    CascadeModel model(default_scale_config(), cfg.channels, cfg.kernel, cfg.cascade_seed);
    model.set_messages(v.messages);
    init_heads_from_backbone(net, model);
    runs.push_back({v.name, net, std::move(model), {}});
  }
  say("stage 2: " + std::to_string(cfg.stage2.steps_for(train.size())) + " steps x " +
      std::to_string(runs.size()) + " variants");
  train_stage2(runs, train, cfg.stage2, auto_kernel_factory(), cfg.jobs);

  for (std::size_t i = 0; i < runs.size(); ++i) {
    VariantResult v;
    v.name = runs[i].name;
    v.messages = cfg.variants[i].messages;
    v.final_loss = smoothed_loss(runs[i].log).back();
    v.score = score_split(runs[i].net, &runs[i].model, test, cfg.jobs);
    say(v.name + ": max-F " + std::to_string(v.score.max_f));
    if (write) {
      const auto d = out_dir / v.name;
      save_checkpoint(d, {2, runs[i].net, runs[i].model});
      write_log_csv(d / "log.csv", runs[i].log);
      write_scores_csv(d / "scores.csv", v.score);
    }
    res.variants.push_back(std::move(v));
  }
  if (write) write_ablation_csv(out_dir / "ablation.csv", res);
  return res;
}

ProtocolResult run_protocol(const ProtocolConfig& cfg, const std::filesystem::path& out_dir,
                            const ProgressFn& progress) {
  cfg.validate();
  auto all = synth_generate(cfg.synth, cfg.data_seed);
  std::vector<Sample> test(all.begin() + static_cast<std::ptrdiff_t>(cfg.train_count), all.end());
  all.resize(cfg.train_count);
  return run_protocol(cfg, all, test, out_dir, progress);
}

}  // namespace ucrf
