// lappyr: Laplacian-pyramid intrinsic image decomposition toolkit.
//
// Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "lappyr/checkpoint.hpp"
#include "lappyr/datapipe.hpp"
#include "lappyr/errors.hpp"
#include "lappyr/gradcheck.hpp"
#include "lappyr/image_io.hpp"
#include "lappyr/metrics.hpp"
#include "lappyr/pyramid.hpp"
#include "lappyr/trainer.hpp"

namespace fs = std::filesystem;
using namespace lappyr;

namespace {

// Flag combinations that CLI11 cannot express; mapped to exit code 1.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TrainFlags {
  std::string manifest;
  std::string out_dir;
  std::string scheme = "joint";
  std::string variant = "pyramid_d";
  std::string split_mode = "none";
  int levels = 4;
  int hidden = 32;
  int substructures = 6;
  int steps = 1000;
  int batch = 8;
  int crop = 256;
  double scale_min = 0.8;
  double scale_max = 1.2;
  double flip_p = 0.5;
  double lr_start = 1e-4;
  double lr_end = 1e-6;
  double lambda_d = 1.0;
  double lambda_p = 0.5;
  double lambda_t = 1e-4;
  double sigma_s = 1.0;
  double sigma_r = 0.0;  // 0 = adaptive
  int bilateral_window = 5;
  std::uint64_t seed = 0;
  std::uint64_t fx_seed = FeatureExtractor<float>::kDefaultSeed;
  std::string fx_weights;
  int checkpoint_every = 0;
  bool freeze_lower = false;
  bool clip_grad = false;
  bool desk_scale = false;
  bool paper_scale = false;
};

void add_preset_flags(CLI::App* cmd, TrainFlags& f) {
  cmd->add_flag("--desk-scale", f.desk_scale,
                "Preset: levels 2, hidden 16, substructures 2, batch 2, crop 64, "
                "no random rescale");
  cmd->add_flag("--paper-scale", f.paper_scale,
                "Preset: levels 4, hidden 32, substructures 6, batch 8, crop 256");
}

void apply_presets(const CLI::App* cmd, TrainFlags& f) {
  if (f.desk_scale && f.paper_scale)
    throw UsageError("--desk-scale and --paper-scale are mutually exclusive");
  if (!f.desk_scale && !f.paper_scale) return;
  auto unset = [&](const std::string& name) { return cmd->count(name) == 0; };
  if (f.desk_scale) {
    if (unset("--levels")) f.levels = 2;
    if (unset("--hidden")) f.hidden = 16;
    if (unset("--substructures")) f.substructures = 2;
    if (unset("--batch")) f.batch = 2;
    if (unset("--crop")) f.crop = 64;
    // desk sources are typically crop-sized already; downscaling would make
    // the crop impossible
    if (unset("--scale-min")) f.scale_min = 1.0;
    if (unset("--scale-max")) f.scale_max = 1.0;
  }
  // paper-scale matches the built-in defaults; it exists so runs can state
  // the preset explicitly.
}

BilateralParams bilateral_from(const TrainFlags& f) {
  BilateralParams p;
  p.sigma_s = f.sigma_s;
  p.window = f.bilateral_window;
  if (f.sigma_r > 0.0) {
    p.adaptive_sigma_r = false;
    p.sigma_r = f.sigma_r;
  }
  return p;
}

FeatureExtractor<float> extractor_from(const TrainFlags& f) {
  if (!f.fx_weights.empty()) return FeatureExtractor<float>::load_file(f.fx_weights);
  return FeatureExtractor<float>::surrogate(f.fx_seed);
}

int run_train(const CLI::App* cmd, TrainFlags& f) {
  apply_presets(cmd, f);
  NetConfig net_cfg;
  net_cfg.levels = f.levels;
  net_cfg.hidden = f.hidden;
  net_cfg.substructures = f.substructures;
  net_cfg.variant = variant_from_name(f.variant);
  if (f.scheme == "hierarchical" && net_cfg.variant != Variant::pyramid_d)
    throw UsageError("--scheme hierarchical requires --variant pyramid_d");
  if (f.scheme != "joint" && f.scheme != "hierarchical")
    throw UsageError("unknown scheme: " + f.scheme);

  TrainConfig cfg;
  cfg.batch = f.batch;
  cfg.crop = f.crop;
  cfg.scale_min = f.scale_min;
  cfg.scale_max = f.scale_max;
  cfg.flip_p = f.flip_p;
  cfg.lr_start = f.lr_start;
  cfg.lr_end = f.lr_end;
  cfg.steps = f.steps;
  cfg.scheme = f.scheme == "joint" ? TrainScheme::joint : TrainScheme::hierarchical;
  cfg.seed = f.seed;
  cfg.weights = LossWeights{f.lambda_d, f.lambda_p, f.lambda_t};
  cfg.bilateral = bilateral_from(f);
  cfg.checkpoint_every = f.checkpoint_every;
  cfg.freeze_lower = f.freeze_lower;
  cfg.clip_gradients = f.clip_grad;

  Dataset ds = Dataset::load_manifest(f.manifest);
  if (f.split_mode == "image") ds = split(ds, SplitMode::image_split, f.seed).first;
  else if (f.split_mode == "scene") ds = split(ds, SplitMode::scene_split, f.seed).first;
  else if (f.split_mode != "none") throw UsageError("unknown split mode: " + f.split_mode);

  auto fx = extractor_from(f);
  auto albedo_net = LapPyrNet<float>::build(net_cfg, derive_seed(f.seed, 1));
  auto shading_net = LapPyrNet<float>::build(net_cfg, derive_seed(f.seed, 2));

  TrainResult result =
      cfg.scheme == TrainScheme::joint
          ? train_joint(albedo_net, shading_net, ds, cfg, fx, f.out_dir)
          : train_hierarchical(albedo_net, shading_net, ds, cfg, fx, f.out_dir);

  std::printf("trained %d steps on %zu pairs (%s scheme)\n", cfg.steps, ds.size(),
              f.scheme.c_str());
  if (!result.log.empty())
    std::printf("final loss: total=%.6g data=%.6g percep=%.6g tv=%.6g\n",
                result.log.back().total, result.log.back().data,
                result.log.back().perceptual, result.log.back().tv);
  std::printf("checkpoint: %s\n", result.final_checkpoint.c_str());
  return 0;
}

struct EvalFlags {
  std::string manifest;
  std::string checkpoint;
  std::string pred_dir;
  std::string report_path;
};

Image read_prediction(const std::string& dir, const std::string& id, const char* kind) {
  for (const char* ext : {".pfm", ".png"}) {
    const fs::path p = fs::path(dir) / (id + "_" + kind + ext);
    if (fs::exists(p)) return read_image(p.string());
  }
  throw DataError("prediction dir " + dir + " has no " + id + "_" + kind + ".pfm/.png");
}

int run_eval(const EvalFlags& f) {
  if (f.checkpoint.empty() == f.pred_dir.empty())
    throw UsageError("eval needs exactly one of --checkpoint or --pred-dir");
  Dataset ds = Dataset::load_manifest(f.manifest);
  if (ds.empty()) throw DataError("eval: empty manifest " + f.manifest);

  MetricReport report;
  if (!f.checkpoint.empty()) {
    auto [albedo_net, shading_net] = load_checkpoint(f.checkpoint);
    report = evaluate(albedo_net, shading_net, ds);
  } else {
    for (std::size_t i = 0; i < ds.size(); ++i) {
      const SamplePair& p = ds.pair(i);
      Image pred_a = read_prediction(f.pred_dir, p.id, "albedo");
      Image pred_s = read_prediction(f.pred_dir, p.id, "shading");
      if (!pred_a.same_extents(p.albedo) || !pred_s.same_extents(p.shading))
        throw DataError("prediction extents do not match ground truth for '" + p.id + "'");
      report.per_image.push_back(evaluate_pair(p.id, pred_a, p.albedo, pred_s, p.shading));
    }
    report.finalize();
  }
  report.print_table(std::cout);
  if (!f.report_path.empty()) {
    std::ofstream out(f.report_path);
    if (!out) throw DataError("cannot write " + f.report_path);
    out << report.to_json().dump(2) << "\n";
    std::printf("report: %s\n", f.report_path.c_str());
  }
  return 0;
}

struct DecomposeFlags {
  std::string checkpoint;
  std::string out_dir = ".";
  std::vector<std::string> inputs;
  bool emit_components = false;
};

int run_decompose(const DecomposeFlags& f) {
  auto [albedo_net, shading_net] = load_checkpoint(f.checkpoint);
  const int levels = albedo_net.config().levels;
  const int multiple =
      albedo_net.config().variant == Variant::pyramid_d ? 1 << levels : 2;
  fs::create_directories(f.out_dir);
  for (const auto& path : f.inputs) {
    Image input = read_image(path);
    if (input.channels == 1) input = expand_to_rgb(input);
    if (input.height % multiple != 0 || input.width % multiple != 0) {
      const int pad_h = (multiple - input.height % multiple) % multiple;
      const int pad_w = (multiple - input.width % multiple) % multiple;
      throw DataError(path + ": extents " + std::to_string(input.width) + "x" +
                      std::to_string(input.height) + " must be multiples of " +
                      std::to_string(multiple) + "; pad by " + std::to_string(pad_w) +
                      " columns and " + std::to_string(pad_h) + " rows");
    }
    const std::string stem = fs::path(path).stem().string();
    auto [albedo, shading] = decompose(albedo_net, shading_net, input);
    for (const auto& [img, kind] : {std::pair{&albedo, "albedo"}, {&shading, "shading"}}) {
      const std::string base = (fs::path(f.out_dir) / (stem + "_" + kind)).string();
      write_pfm(base + ".pfm", *img);
      write_png(base + ".png", *img);  // clamped preview
    }
    if (f.emit_components) {
      NoGradGuard no_grad;
      Tensor<float> x = image_to_tensor<float>(input);
      for (const auto& [net, kind] :
           {std::pair{&albedo_net, "albedo"}, {&shading_net, "shading"}}) {
        auto out = net->forward(x);
        for (std::size_t k = 0; k < out.components.size(); ++k) {
          const std::string name = stem + "_" + kind + "_c" + std::to_string(k) + ".pfm";
          write_pfm((fs::path(f.out_dir) / name).string(),
                    tensor_to_image(out.components[k]));
        }
      }
    }
    std::printf("%s -> %s_{albedo,shading}.{png,pfm}\n", path.c_str(), stem.c_str());
  }
  return 0;
}

struct PyramidFlags {
  std::string input;
  std::string out_dir;
  int levels = 4;
};

int run_pyramid(const PyramidFlags& f) {
  Image img = read_image(f.input);
  const int div = 1 << f.levels;
  if (img.height % div != 0 || img.width % div != 0)
    throw DataError(f.input + ": extents must be divisible by 2^" + std::to_string(f.levels));
  fs::create_directories(f.out_dir);
  auto gauss = gaussian_expand(img, f.levels);
  auto lap = laplacian_expand(img, f.levels);
  for (int k = 0; k <= f.levels; ++k) {
    const std::string g = (fs::path(f.out_dir) / ("gauss_" + std::to_string(k))).string();
    write_pfm(g + ".pfm", gauss.levels[static_cast<std::size_t>(k)]);
    write_png(g + ".png", gauss.levels[static_cast<std::size_t>(k)]);
  }
  for (int k = 0; k < f.levels; ++k) {
    const Image& d = lap.levels[static_cast<std::size_t>(k)];
    const std::string base = (fs::path(f.out_dir) / ("lap_" + std::to_string(k))).string();
    write_pfm(base + ".pfm", d);
    Image preview = d;  // details are signed; bias for the 8-bit preview
    for (float& v : preview.data) v += 0.5f;
    write_png(base + ".png", preview);
  }
  const std::string low = (fs::path(f.out_dir) / "low").string();
  write_pfm(low + ".pfm", lap.levels.back());
  write_png(low + ".png", lap.levels.back());
  std::printf("wrote %d gaussian, %d laplacian levels and the low band to %s\n",
              f.levels + 1, f.levels, f.out_dir.c_str());
  const Image rec = collapse(lap);
  std::printf("collapse round-trip max abs error: %.3g\n",
              static_cast<double>(max_abs_diff(rec, img)));
  return 0;
}

int run_gradcheck(std::uint64_t seed) {
  auto report = run_gradient_suite(seed);
  for (const auto& item : report.items)
    std::printf("[%s] %-28s max rel err %.3e (tol %.0e)\n", item.passed ? "ok" : "FAIL",
                item.name.c_str(), item.max_rel_error, item.tolerance);
  if (!report.all_passed()) throw NumericError("gradient suite failed");
  std::printf("gradient suite: %zu checks passed\n", report.items.size());
  return 0;
}

struct SynthFlags {
  int n = 8;
  int size = 64;
  std::uint64_t seed = 0;
  std::string out_dir;
};

int run_synth(const SynthFlags& f) {
  if (f.n < 1 || f.size < 8) throw UsageError("synth needs --n >= 1 and --size >= 8");
  std::vector<SamplePair> pairs;
  for (int i = 0; i < f.n; ++i) {
    auto p = synth_mondrian(derive_seed(f.seed, static_cast<std::uint64_t>(i)), f.size, f.size);
    char id[32];
    std::snprintf(id, sizeof(id), "mondrian%04d", i);
    p.id = id;
    pairs.push_back(std::move(p));
  }
  const std::string manifest = write_triples(f.out_dir, pairs);
  std::printf("wrote %d triples (%d images) and %s\n", f.n, 3 * f.n, manifest.c_str());
  return 0;
}

struct AugmentFlags {
  std::string checkpoint;
  std::string input_dir;
  std::vector<std::string> inputs;
  std::string out_dir;
  double strength = 1.0;
  int count = 0;  // 0 = all
};

int run_augment(const AugmentFlags& f) {
  auto [albedo_net, shading_net] = load_checkpoint(f.checkpoint);
  std::vector<std::string> paths = f.inputs;
  if (!f.input_dir.empty()) {
    if (!fs::is_directory(f.input_dir)) throw DataError(f.input_dir + " is not a directory");
    for (const auto& e : fs::directory_iterator(f.input_dir)) {
      const std::string ext = e.path().extension().string();
      if (ext == ".png" || ext == ".pfm") paths.push_back(e.path().string());
    }
    std::sort(paths.begin(), paths.end());
  }
  if (paths.empty()) throw DataError("augment: no input images given");
  if (f.count > 0 && static_cast<std::size_t>(f.count) < paths.size())
    paths.resize(static_cast<std::size_t>(f.count));

  std::vector<Image> images;
  std::vector<std::string> ids;
  for (const auto& p : paths) {
    Image img = read_image(p);
    if (img.channels == 1) img = expand_to_rgb(img);
    images.push_back(std::move(img));
    ids.push_back(fs::path(p).stem().string() + "-aug");
  }
  auto pairs = self_augment(albedo_net, shading_net, images, f.strength, ids);
  const std::string manifest = write_triples(f.out_dir, pairs);
  std::printf("augmented %zu images -> %s\n", pairs.size(), manifest.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Laplacian-pyramid intrinsic image decomposition toolkit", "lappyr"};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);

  std::function<int()> runner;

  // train
  TrainFlags tf;
  auto* train = app.add_subcommand("train", "Train albedo and shading networks");
  train->set_config("--config", "", "Flat key=value file mirroring the flags (flags win)");
  train->add_option("--manifest", tf.manifest, "Training manifest (tsv)")->required();
  train->add_option("--out-dir", tf.out_dir, "Output directory for checkpoints and logs")
      ->required();
  train->add_option("--scheme", tf.scheme, "joint|hierarchical");
  train->add_option("--variant", tf.variant,
                    "sequential_a|stacked_split_b|parallel_c|pyramid_d");
  train->add_option("--split", tf.split_mode, "none|image|scene (train on the first half)");
  train->add_option("--levels", tf.levels, "Pyramid depth K");
  train->add_option("--hidden", tf.hidden, "Residual block hidden width");
  train->add_option("--substructures", tf.substructures, "Conv-ELU-Conv-ELU units per block");
  train->add_option("--steps", tf.steps, "Optimization steps");
  train->add_option("--batch", tf.batch, "Mini-batch size");
  train->add_option("--crop", tf.crop, "Square crop extent");
  train->add_option("--scale-min", tf.scale_min, "Random rescale lower bound");
  train->add_option("--scale-max", tf.scale_max, "Random rescale upper bound");
  train->add_option("--flip-p", tf.flip_p, "Horizontal flip probability");
  train->add_option("--lr-start", tf.lr_start, "Initial learning rate");
  train->add_option("--lr-end", tf.lr_end, "Final learning rate");
  train->add_option("--lambda-d", tf.lambda_d, "Data loss weight");
  train->add_option("--lambda-p", tf.lambda_p, "Perceptual loss weight");
  train->add_option("--lambda-t", tf.lambda_t, "Total-variation loss weight");
  train->add_option("--sigma-s", tf.sigma_s, "Bilateral spatial width");
  train->add_option("--sigma-r", tf.sigma_r, "Bilateral range width (0 = adaptive)");
  train->add_option("--bilateral-window", tf.bilateral_window, "Bilateral neighborhood extent");
  train->add_option("--seed", tf.seed, "Master seed")->envname("LAPPYR_SEED");
  train->add_option("--fx-seed", tf.fx_seed, "Surrogate feature-extractor seed");
  train->add_option("--fx-weights", tf.fx_weights, "Feature-extractor weight file");
  train->add_option("--checkpoint-every", tf.checkpoint_every,
                    "Checkpoint cadence in steps (0 = final only)");
  train->add_flag("--freeze-lower", tf.freeze_lower,
                  "Hierarchical: freeze blocks trained in earlier stages");
  train->add_flag("--clip-grad", tf.clip_grad, "Clip gradients by global norm");
  add_preset_flags(train, tf);
  train->callback([&] { runner = [&] { return run_train(train, tf); }; });

  // eval
  EvalFlags ef;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint or prediction directory");
  eval_cmd->add_option("--manifest", ef.manifest, "Ground-truth manifest (tsv)")->required();
  eval_cmd->add_option("--checkpoint", ef.checkpoint, "Model checkpoint to run");
  eval_cmd->add_option("--pred-dir", ef.pred_dir,
                       "Directory of <id>_albedo/<id>_shading predictions");
  eval_cmd->add_option("--report", ef.report_path, "Write the JSON report here");
  eval_cmd->callback([&] { runner = [&] { return run_eval(ef); }; });

  // decompose
  DecomposeFlags df;
  auto* dec = app.add_subcommand("decompose", "Split images into albedo and shading");
  dec->add_option("--checkpoint", df.checkpoint, "Model checkpoint")->required();
  dec->add_option("--out-dir", df.out_dir, "Output directory");
  dec->add_flag("--emit-components", df.emit_components,
                "Also write per-level pyramid components (pfm)");
  dec->add_option("inputs", df.inputs, "Input images (png/pfm)")->required();
  dec->callback([&] { runner = [&] { return run_decompose(df); }; });

  // pyramid
  PyramidFlags pf;
  auto* pyr = app.add_subcommand("pyramid", "Write reference pyramid levels for inspection");
  pyr->add_option("--input", pf.input, "Input image")->required();
  pyr->add_option("--levels", pf.levels, "Number of reductions K");
  pyr->add_option("--out-dir", pf.out_dir, "Output directory")->required();
  pyr->callback([&] { runner = [&] { return run_pyramid(pf); }; });

  // gradcheck
  std::uint64_t gc_seed = 0;
  auto* gc = app.add_subcommand("gradcheck", "Run the finite-difference gradient suite");
  gc->add_option("--seed", gc_seed, "Suite seed")->envname("LAPPYR_SEED");
  gc->callback([&] { runner = [&] { return run_gradcheck(gc_seed); }; });

  // synth
  SynthFlags sf;
  auto* synth = app.add_subcommand("synth", "Generate synthetic mondrian training triples");
  synth->add_option("--n", sf.n, "Number of triples");
  synth->add_option("--size", sf.size, "Square extent");
  synth->add_option("--seed", sf.seed, "Generator seed")->envname("LAPPYR_SEED");
  synth->add_option("--out-dir", sf.out_dir, "Output directory")->required();
  synth->callback([&] { runner = [&] { return run_synth(sf); }; });

  // augment
  AugmentFlags af;
  auto* aug = app.add_subcommand("augment",
                                 "Synthesize exact training pairs from unlabeled images");
  aug->add_option("--checkpoint", af.checkpoint, "Model checkpoint")->required();
  aug->add_option("--input-dir", af.input_dir, "Directory scanned for png/pfm inputs");
  aug->add_option("--out-dir", af.out_dir, "Output directory")->required();
  aug->add_option("--strength", af.strength, "Edge-aware smoothing strength");
  aug->add_option("--count", af.count, "Use at most this many inputs (0 = all)");
  aug->add_option("inputs", af.inputs, "Unlabeled images (png/pfm)");
  aug->callback([&] { runner = [&] { return run_augment(af); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    return runner();
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 3;
  } catch (const std::invalid_argument& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
