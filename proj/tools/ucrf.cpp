#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <string>

#include "ucrf/cascade/cascade.hpp"
#include "ucrf/core/io.hpp"
#include "ucrf/core/parallel.hpp"
#include "ucrf/learn/checkpoint.hpp"
#include "ucrf/learn/data.hpp"
#include "ucrf/learn/gradcheck.hpp"
#include "ucrf/learn/protocol.hpp"
#include "ucrf/learn/train.hpp"
#include "ucrf/lattice/pairwise.hpp"
#include "ucrf/lattice/permutohedral.hpp"
#include "ucrf/metrics/metrics.hpp"

namespace fs = std::filesystem;
using namespace ucrf;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string one_line(std::string s) {
  for (char& c : s)
    if (c == '\n' || c == '\r') c = ' ';
  while (!s.empty() && s.back() == ' ') s.pop_back();
  return s;
}

double seconds_since(std::chrono::steady_clock::time_point t) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t).count();
}

std::vector<fs::path> png_files(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw std::runtime_error("not a directory: " + dir.string());
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".png") out.push_back(e.path());
  std::sort(out.begin(), out.end());
  if (out.empty()) throw std::runtime_error("no .png files in " + dir.string());
  return out;
}

// synth

struct SynthArgs {
  fs::path out;
  std::size_t count = 600, width = 64, height = 48;
  std::uint64_t seed = 7;
};

int run_synth(const SynthArgs& a) {
  SynthConfig cfg;
  cfg.count = a.count;
  cfg.width = a.width;
  cfg.height = a.height;
  save_dataset(a.out, synth_generate(cfg, a.seed));
  std::printf("wrote %zu samples to %s\n", a.count, a.out.string().c_str());
  return 0;
}

// train

struct TrainArgs {
  int stage = 1;
  fs::path data, out, init;
  std::string preset = "toy";
  std::string messages = "ff,fs,ss";
  std::size_t channels = 16;
  int iters = 0, epochs = -1, iter_size = 0;
  double lr = 0, beta_lr = 0, alpha_lr = -1, momentum = -1, weight_decay = -1;
  bool no_flip = false;
  std::uint64_t seed = 1;
  int jobs = 1;
};

TrainConfig train_config(const TrainArgs& a) {
  if (a.preset != "toy" && a.preset != "published") throw UsageError("--preset must be toy or published");
  TrainConfig c = a.preset == "toy" ? toy_train_config(a.stage) : published_train_config(a.stage);
  c.seed = a.seed;
  if (a.iters > 0) {
    c.max_iter = a.iters;
    c.epochs = 0;
  }
  if (a.epochs >= 0) c.epochs = a.epochs;
  if (a.iter_size > 0) c.iter_size = a.iter_size;
  if (a.lr > 0) c.learning_rate = a.lr;
  if (a.beta_lr > 0) c.beta_learning_rate = a.beta_lr;
  if (a.alpha_lr >= 0) c.alpha_learning_rate = a.alpha_lr;
  if (a.momentum >= 0) c.momentum = a.momentum;
  if (a.weight_decay >= 0) c.weight_decay = a.weight_decay;
  if (a.no_flip) c.flip = false;
  c.validate();
  return c;
}

int run_train(const TrainArgs& a) {
  const TrainConfig cfg = train_config(a);
  const auto data = load_dataset(a.data);
  const auto t0 = std::chrono::steady_clock::now();
  if (a.stage == 1) {
    if (!a.init.empty()) throw UsageError("--init is only used by stage 2");
    ToyBackbone net = init_backbone(a.channels, a.seed);
    const auto log = train_stage1(net, data, cfg);
    save_checkpoint(a.out, {1, net, std::nullopt});
    write_log_csv(a.out / "log.csv", log);
    std::printf("stage 1: %zu steps in %.1fs, final smoothed loss %.6f\n", log.size(), seconds_since(t0),
                smoothed_loss(log).back());
    return 0;
  }
  if (a.init.empty()) throw UsageError("stage 2 needs --init with a stage-1 checkpoint");
  const Checkpoint init = load_checkpoint(a.init);
  if (!init.net) throw std::runtime_error("checkpoint " + a.init.string() + " has no backbone");
  CascadeModel model = init.model ? *init.model
                                  : CascadeModel(default_scale_config(), init.net->channels, 3, a.seed);
  model.set_messages(MessageSet::parse(a.messages));
  if (!init.model) init_heads_from_backbone(*init.net, model);
  std::vector<Stage2Run> runs{{"run", *init.net, std::move(model), {}}};
  train_stage2(runs, data, cfg, auto_kernel_factory(), a.jobs);
  save_checkpoint(a.out, {2, runs[0].net, runs[0].model});
  write_log_csv(a.out / "log.csv", runs[0].log);
  std::printf("stage 2 (%s): %zu steps in %.1fs, final smoothed loss %.6f\n", a.messages.c_str(),
              runs[0].log.size(), seconds_since(t0), smoothed_loss(runs[0].log).back());
  return 0;
}

// refine

struct RefineArgs {
  fs::path checkpoint, image, images, sideouts, out;
  int jobs = static_cast<int>(default_jobs());
};

int run_refine(const RefineArgs& a) {
  const Checkpoint ckpt = load_checkpoint(a.checkpoint);
  if (!ckpt.model) throw std::runtime_error("checkpoint " + a.checkpoint.string() + " has no cascade");
  const CascadeModel& model = *ckpt.model;
  if (a.image.empty() == a.images.empty()) throw UsageError("give exactly one of --image and --images");

  if (!a.image.empty()) {
    const RgbImage img = read_rgb_image(a.image);
    PredictionMap o;
    if (!a.sideouts.empty()) {
      const SideOutputs so = import_side_outputs(a.sideouts, img.width(), img.height(), model.scale_count());
      o = cascade_forward({so.f, so.s}, img, model).final_map();
    } else {
      if (!ckpt.net) throw std::runtime_error("checkpoint has no backbone; pass --sideouts");
      o = predict(*ckpt.net, model, img);
    }
    write_gray_png(a.out, saliency_to_gray(o));
    return 0;
  }
  if (!a.sideouts.empty()) throw UsageError("--sideouts takes a single --image");
  if (!ckpt.net) throw std::runtime_error("checkpoint has no backbone");
  const auto files = png_files(a.images);
  fs::create_directories(a.out);
  const KernelFactory kf = auto_kernel_factory();
  parallel_for(files.size(), a.jobs, [&](std::size_t i) {
    const RgbImage img = read_rgb_image(files[i]);
    write_gray_png(a.out / files[i].filename(), saliency_to_gray(predict(*ckpt.net, model, img, kf)));
  });
  std::printf("refined %zu images into %s\n", files.size(), a.out.string().c_str());
  return 0;
}

// eval

struct EvalArgs {
  fs::path pred, gt, out, curve;
  int jobs = static_cast<int>(default_jobs());
};

int run_eval(const EvalArgs& a) {
  const auto gts = png_files(a.gt);
  std::vector<EvalItem> items(gts.size());
  parallel_for(gts.size(), a.jobs, [&](std::size_t i) {
    const fs::path p = a.pred / gts[i].filename();
    if (!fs::exists(p)) throw std::runtime_error("missing prediction " + p.string());
    items[i] = {gts[i].stem().string(), read_gray_image(p), read_mask(gts[i])};
  });
  const DatasetScore s = evaluate_dataset(items, a.jobs);
  if (!a.out.empty()) write_scores_csv(a.out, s);
  if (!a.curve.empty()) write_curve_csv(a.curve, s.mean_curve);
  std::printf("images %zu max_f %.6f mean_image_max_f %.6f mae %.6f\n", items.size(), s.max_f, s.mean_image_max_f,
              s.mean_mae);
  return 0;
}

// filter-demo

struct FilterArgs {
  std::size_t size = 16, count = 10;
  double intensity_scale = 1.0;
  std::uint64_t seed = 1;
};

double rel_l2(const Tensor& a, const Tensor& b) {
  double num = 0, den = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (a[i] - b[i]) * (a[i] - b[i]);
    den += b[i] * b[i];
  }
  return std::sqrt(num / den);
}

int run_filter_demo(const FilterArgs& a) {
  if (a.size < 2 || a.count == 0) throw UsageError("--size must be >= 2 and --count >= 1");
  std::mt19937_64 rng(a.seed);
  std::uniform_real_distribution<double> u(0, 1);
  struct Row {
    const char* name;
    double worst = 0, mean = 0, t_lattice = 0, t_brute = 0;
  };
  Row rows[] = {{"K1 sigma_alpha=60 sigma_beta=5"}, {"K2 sigma_gamma=3"}, {"K2 sigma_gamma=10"}};
  for (std::size_t k = 0; k < a.count; ++k) {
    Tensor px({3, a.size, a.size});
    for (double& v : px.data()) v = u(rng);
    const RgbImage img(px);
    Tensor values({a.size * a.size});
    for (double& v : values.data()) v = u(rng);
    const EmbeddingSet embs[] = {build_bilateral_features(img, 60, 5, a.intensity_scale),
                                 build_spatial_features(a.size, a.size, 3),
                                 build_spatial_features(a.size, a.size, 10)};
    for (int r = 0; r < 3; ++r) {
      auto t = std::chrono::steady_clock::now();
      const Tensor got = PermutohedralLattice(embs[r]).pairwise_apply(values);
      rows[r].t_lattice += seconds_since(t);
      t = std::chrono::steady_clock::now();
      const Tensor want = brute_force_pairwise(embs[r], values);
      rows[r].t_brute += seconds_since(t);
      const double e = rel_l2(got, want);
      rows[r].worst = std::max(rows[r].worst, e);
      rows[r].mean += e / static_cast<double>(a.count);
    }
  }
  std::printf("%zu images of %zux%zu, relative L2 error of the lattice against the exact sum\n", a.count, a.size,
              a.size);
  std::printf("%-32s %10s %10s %12s %12s\n", "kernel", "mean", "worst", "lattice ms", "exact ms");
  for (const Row& r : rows)
    std::printf("%-32s %10.4f %10.4f %12.2f %12.2f\n", r.name, r.mean, r.worst,
                1000 * r.t_lattice / static_cast<double>(a.count), 1000 * r.t_brute / static_cast<double>(a.count));
  return 0;
}

// gradcheck

int run_gradcheck_cmd(const GradcheckOptions& o, double tolerance) {
  const auto t0 = std::chrono::steady_clock::now();
  const GradcheckReport r = run_gradcheck(o);
  for (const auto& e : r.entries) std::printf("%-22s %6zu %.3e\n", e.name.c_str(), e.checked, e.max_rel);
  const double m = r.max_rel();
  std::printf("max relative error %.3e (tolerance %.0e) in %.1fs\n", m, tolerance, seconds_since(t0));
  return m <= tolerance ? 0 : 1;
}

// ablate

struct AblateArgs {
  fs::path out;
  std::uint64_t seed = 7;
  std::size_t count = 600, train_count = 500, channels = 16;
  int stage1_iters = 0, epochs = 0, steps = 0;
  int jobs = 1;
  bool quiet = false;
};

int run_ablate(const AblateArgs& a) {
  ProtocolConfig cfg;
  cfg.data_seed = a.seed;
  cfg.synth.count = a.count;
  cfg.train_count = a.train_count;
  cfg.channels = a.channels;
  cfg.jobs = a.jobs;
  if (a.stage1_iters > 0) cfg.stage1.max_iter = a.stage1_iters;
  if (a.epochs > 0) cfg.stage2.epochs = a.epochs;
  if (a.steps > 0) {
    cfg.stage2.epochs = 0;
    cfg.stage2.max_iter = a.steps;
  }
  const auto t0 = std::chrono::steady_clock::now();
  ProgressFn progress;
  if (!a.quiet)
    progress = [&](const std::string& s) {
      std::fprintf(stderr, "[%6.1fs] %s\n", seconds_since(t0), s.c_str());
    };
  const ProtocolResult r = run_protocol(cfg, a.out, progress);
  std::printf("%-12s %-10s %8s %8s %8s %10s\n", "variant", "messages", "max-F", "img-F", "MAE", "loss");
  for (const auto& v : r.variants)
    std::printf("%-12s %-10s %8.4f %8.4f %8.4f %10.5f\n", v.name.c_str(), v.messages.str().c_str(), v.score.max_f,
                v.score.mean_image_max_f, v.score.mean_mae, v.final_loss);
  std::printf("total %.1fs\n", seconds_since(t0));
  return 0;
}

// Splices the --config file into the argument list as flags placed before
// the command-line ones. Lines are key=value (or a bare key for a flag);
// [section] headers limit the keys that follow to one subcommand.
std::vector<std::string> expand_config(int argc, char** argv, const CLI::App& app) {
  std::vector<std::string> in(argv + 1, argv + argc), rest;
  fs::path config;
  for (std::size_t i = 0; i < in.size(); ++i) {
    if (in[i] == "--config") {
      if (i + 1 == in.size()) throw CLI::ParseError("--config needs a file", CLI::ExitCodes::ArgumentMismatch);
      config = in[++i];
    } else if (in[i].rfind("--config=", 0) == 0) {
      config = in[i].substr(9);
    } else {
      rest.push_back(in[i]);
    }
  }
  if (rest.empty() || rest[0].rfind("-", 0) == 0) return rest;
  const std::string sub = rest[0];
  bool known = false;
  for (const auto* s : app.get_subcommands({})) known |= s->get_name() == sub;
  if (!known) throw CLI::ParseError("unknown subcommand '" + sub + "'", CLI::ExitCodes::ExtrasError);
  if (config.empty()) return rest;

  std::ifstream is(config);
  if (!is) throw CLI::ParseError("cannot read config file " + config.string(), CLI::ExitCodes::FileError);
  auto trim = [](std::string t) {
    const auto a = t.find_first_not_of(" \t\r"), b = t.find_last_not_of(" \t\r");
    return a == std::string::npos ? std::string() : t.substr(a, b - a + 1);
  };
  std::vector<std::string> from_file;
  std::string line, section;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    line = trim(line.substr(0, line.find('#')));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw CLI::ParseError(config.string() + ":" + std::to_string(lineno) + ": bad section header",
                              CLI::ExitCodes::ConversionError);
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    if (!section.empty() && section != sub) continue;
    const auto eq = line.find('=');
    std::string key = trim(line.substr(0, eq));
    if (key.rfind("--", 0) != 0) key = "--" + key;
    bool given = false;
    for (const auto& r : rest) given |= r == key || r.rfind(key + "=", 0) == 0;
    if (given) continue;
    if (eq == std::string::npos) {
      from_file.push_back(key);
      continue;
    }
    const std::string value = trim(line.substr(eq + 1));
    if (value == "true") {
      from_file.push_back(key);
    } else if (value != "false") {
      from_file.push_back(key);
      from_file.push_back(value);
    }
  }
  rest.insert(rest.begin() + 1, from_file.begin(), from_file.end());
  return rest;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ucrf: multi-scale CRF refinement of saliency maps"};
  app.footer("--config FILE before or after the subcommand: key=value lines mirroring its flags, optionally\n"
             "under [subcommand] headers; flags on the command line win.");
  app.require_subcommand(1);

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "Generate the synthetic shapes dataset");
  synth->add_option("--out", sa.out, "Output directory")->required();
  synth->add_option("--count", sa.count, "Number of samples")->capture_default_str();
  synth->add_option("--width", sa.width)->capture_default_str();
  synth->add_option("--height", sa.height)->capture_default_str();
  synth->add_option("--seed", sa.seed)->capture_default_str();

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Stage 1 (backbone) or stage 2 (joint) training");
  train->add_option("--stage", ta.stage)->required()->check(CLI::IsMember({1, 2}));
  train->add_option("--data", ta.data, "Dataset directory with img/ and gt/")->required()->check(CLI::ExistingDirectory);
  train->add_option("--out", ta.out, "Checkpoint directory")->required();
  train->add_option("--init", ta.init, "Stage-1 checkpoint (stage 2)");
  train->add_option("--preset", ta.preset, "toy or published optimizer settings")->capture_default_str();
  train->add_option("--messages", ta.messages, "Message types: comma list of ff,fs,ss or none")->capture_default_str();
  train->add_option("--channels", ta.channels, "Backbone feature channels (stage 1)")->capture_default_str();
  train->add_option("--iters", ta.iters, "Optimizer steps (overrides epochs)");
  train->add_option("--epochs", ta.epochs);
  train->add_option("--iter-size", ta.iter_size, "Samples per step");
  train->add_option("--lr", ta.lr);
  train->add_option("--beta-lr", ta.beta_lr);
  train->add_option("--alpha-lr", ta.alpha_lr, "inv_alpha rate; 0 uses --lr");
  train->add_option("--momentum", ta.momentum);
  train->add_option("--weight-decay", ta.weight_decay);
  train->add_flag("--no-flip", ta.no_flip, "Disable horizontal flips");
  train->add_option("--seed", ta.seed)->capture_default_str();
  train->add_option("--jobs", ta.jobs)->capture_default_str();

  RefineArgs ra;
  auto* refine = app.add_subcommand("refine", "Run the cascade and write 8-bit saliency maps");
  refine->add_option("--checkpoint", ra.checkpoint)->required()->check(CLI::ExistingDirectory);
  refine->add_option("--image", ra.image)->check(CLI::ExistingFile);
  refine->add_option("--images", ra.images, "Directory of .png images")->check(CLI::ExistingDirectory);
  refine->add_option("--sideouts", ra.sideouts, "Directory with f1..f5 and s1..s5 tensors")
      ->check(CLI::ExistingDirectory);
  refine->add_option("--out", ra.out, "Output PNG, or directory with --images")->required();
  refine->add_option("--jobs", ra.jobs)->capture_default_str();

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "Max F-measure and MAE of saliency maps");
  eval->add_option("--pred", ea.pred, "Directory of 8-bit saliency PNGs")->required()->check(CLI::ExistingDirectory);
  eval->add_option("--gt", ea.gt, "Directory of mask PNGs with the same names")->required()->check(CLI::ExistingDirectory);
  eval->add_option("--out", ea.out, "Per-image scores CSV");
  eval->add_option("--curve", ea.curve, "PR curve CSV (256 rows)");
  eval->add_option("--jobs", ea.jobs)->capture_default_str();

  FilterArgs fa;
  auto* filter = app.add_subcommand("filter-demo", "Lattice against exact Gaussian sums");
  filter->add_option("--size", fa.size)->capture_default_str();
  filter->add_option("--count", fa.count)->capture_default_str();
  filter->add_option("--intensity-scale", fa.intensity_scale, "Colour multiplier before sigma_beta (255: 8-bit)")
      ->capture_default_str();
  filter->add_option("--seed", fa.seed)->capture_default_str();

  GradcheckOptions go;
  double tol = 1e-3;
  bool no_backbone = false;
  auto* grad = app.add_subcommand("gradcheck", "Analytic gradients against central differences");
  grad->add_option("--size", go.size)->capture_default_str();
  grad->add_option("--channels", go.channels)->capture_default_str();
  grad->add_option("--iters", go.T, "Mean-field iterations T")->capture_default_str();
  grad->add_option("--scales", go.scales)->capture_default_str();
  grad->add_option("--seed", go.seed)->capture_default_str();
  grad->add_option("--tolerance", tol)->capture_default_str();
  grad->add_flag("--no-backbone", no_backbone, "Skip the backbone + cascade check");

  AblateArgs aa;
  auto* ablate = app.add_subcommand("ablate", "Message-passing ablation on the synthetic benchmark");
  ablate->add_option("--out", aa.out, "Write checkpoints, logs and CSVs here");
  ablate->add_option("--seed", aa.seed, "Dataset seed")->capture_default_str();
  ablate->add_option("--count", aa.count)->capture_default_str();
  ablate->add_option("--train-count", aa.train_count)->capture_default_str();
  ablate->add_option("--channels", aa.channels)->capture_default_str();
  ablate->add_option("--stage1-iters", aa.stage1_iters);
  ablate->add_option("--epochs", aa.epochs, "Stage-2 epochs");
  ablate->add_option("--steps", aa.steps, "Stage-2 steps (overrides epochs)");
  ablate->add_option("--jobs", aa.jobs)->capture_default_str();
  ablate->add_flag("--quiet", aa.quiet);

  try {
    std::vector<std::string> args = expand_config(argc, argv, app);
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << one_line(e.what()) << "\n";
    return 2;
  }

  try {
    if (*synth) return run_synth(sa);
    if (*train) return run_train(ta);
    if (*refine) return run_refine(ra);
    if (*eval) return run_eval(ea);
    if (*filter) return run_filter_demo(fa);
    if (*grad) {
      go.backbone = !no_backbone;
      return run_gradcheck_cmd(go, tol);
    }
    if (*ablate) return run_ablate(aa);
  } catch (const UsageError& e) {
    std::cerr << "error: " << one_line(e.what()) << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << one_line(e.what()) << "\n";
    return 1;
  }
  return 0;
}
