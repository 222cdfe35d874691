#include "lappyr/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "lappyr/checkpoint.hpp"
#include "lappyr/errors.hpp"
#include "lappyr/pyramid.hpp"

namespace fs = std::filesystem;

namespace lappyr {

namespace {

void check(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

double elapsed_ms(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
      .count();
}

void validate_common(const Dataset& ds, const TrainConfig& cfg, const NetConfig& net_cfg) {
  check(cfg.steps >= 1, "train: steps must be >= 1");
  check(cfg.batch >= 1, "train: batch must be >= 1");
  check(cfg.lr_start > 0 && cfg.lr_end > 0 && cfg.lr_end <= cfg.lr_start,
        "train: learning-rate endpoints must satisfy 0 < lr_end <= lr_start");
  if (ds.empty()) throw DataError("train: dataset is empty");
  int multiple = 1;
  if (net_cfg.variant == Variant::pyramid_d) multiple = 1 << net_cfg.levels;
  if (net_cfg.variant == Variant::parallel_c || net_cfg.variant == Variant::stacked_split_b)
    multiple = 2;
  if (cfg.weights.lambda_p > 0) multiple = std::max(multiple, FeatureExtractor<float>::kMinExtent);
  check(cfg.crop % multiple == 0, "train: crop " + std::to_string(cfg.crop) +
                                      " must be a multiple of " + std::to_string(multiple));
}

struct LogSink {
  std::ofstream file;
  std::vector<LogRecord>* records;

  void write(const LogRecord& r) {
    records->push_back(r);
    if (file.is_open()) {
      char line[256];
      std::snprintf(line, sizeof(line),
                    "step=%d lr=%.8e total=%.8e data=%.8e percep=%.8e tv=%.8e wall_ms=%.3f\n",
                    r.step, r.lr, r.total, r.data, r.perceptual, r.tv, r.wall_ms);
      file << line;
    }
  }
};

std::string checkpoint_path(const std::string& out_dir, int step, bool final) {
  char name[64];
  if (final)
    std::snprintf(name, sizeof(name), "checkpoint_final.ckpt");
  else
    std::snprintf(name, sizeof(name), "checkpoint_%06d.ckpt", step);
  return (fs::path(out_dir) / name).string();
}

}  // namespace

double lr_at(const TrainConfig& cfg, int step) {
  check(cfg.steps >= 1, "lr_at: steps must be >= 1");
  const double t = std::clamp(static_cast<double>(step) / cfg.steps, 0.0, 1.0);
  if (cfg.lr_start == cfg.lr_end) return cfg.lr_start;
  return cfg.lr_start * std::pow(cfg.lr_end / cfg.lr_start, t);
}

AdamState::AdamState(std::vector<NamedParam<float>> params, AdamConfig cfg)
    : cfg_(cfg), params_(std::move(params)) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const auto& p : params_) {
    m_.emplace_back(static_cast<std::size_t>(p.tensor.numel()), 0.0f);
    v_.emplace_back(static_cast<std::size_t>(p.tensor.numel()), 0.0f);
  }
}

void AdamState::step(double lr) { step(lr, {}); }

void AdamState::step(double lr, const std::vector<bool>& update_mask) {
  check(update_mask.empty() || update_mask.size() == params_.size(),
        "adam: mask length must match parameter count");
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
  const double bc2 = 1.0 - std::pow(cfg_.beta2, t_);

  double grad_sq = 0.0;
  if (clipping_) {
    for (std::size_t i = 0; i < params_.size(); ++i) {
      if (!update_mask.empty() && !update_mask[i]) continue;
      if (!params_[i].tensor.has_grad()) continue;
      for (float g : params_[i].tensor.grad()) grad_sq += static_cast<double>(g) * g;
    }
  }
  const double clip_scale =
      clipping_ && grad_sq > clip_norm_ * clip_norm_ ? clip_norm_ / std::sqrt(grad_sq) : 1.0;

  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (!update_mask.empty() && !update_mask[i]) continue;
    Tensor<float> p = params_[i].tensor;
    if (!p.has_grad()) continue;
    auto grad = p.grad();
    auto values = p.data();
    float* m = m_[i].data();
    float* v = v_[i].data();
    for (std::size_t j = 0; j < values.size(); ++j) {
      const double g_raw = static_cast<double>(grad[j]);
      if (!std::isfinite(g_raw))
        throw NumericError("adam: non-finite gradient in '" + params_[i].name +
                           "' at element " + std::to_string(j) + " on step " +
                           std::to_string(t_));
      const double g = g_raw * clip_scale;
      m[j] = static_cast<float>(cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g);
      v[j] = static_cast<float>(cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g * g);
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      values[j] -= static_cast<float>(lr * mhat / (std::sqrt(vhat) + cfg_.epsilon));
    }
  }
}

namespace {

// Shared per-step bookkeeping for both schemes.
struct StepContext {
  AdamState adam_albedo;
  AdamState adam_shading;
  LogSink sink;
};

template <typename LossFn>
LogRecord run_step(LapPyrNet<float>& albedo_net, LapPyrNet<float>& shading_net,
                   StepContext& ctx, int step, double lr, LossFn&& make_loss,
                   const std::vector<bool>& mask_a, const std::vector<bool>& mask_s) {
  const auto t0 = std::chrono::steady_clock::now();
  LossParts<float> parts = make_loss();
  const double total = parts.total.item();
  if (!std::isfinite(total))
    throw NumericError("train: non-finite loss at step " + std::to_string(step));
  albedo_net.zero_grad();
  shading_net.zero_grad();
  parts.total.backward();
  ctx.adam_albedo.step(lr, mask_a);
  ctx.adam_shading.step(lr, mask_s);
  LogRecord r;
  r.step = step;
  r.lr = lr;
  r.total = total;
  r.data = parts.data.item();
  r.perceptual = parts.perceptual.item();
  r.tv = parts.tv.item();
  r.wall_ms = elapsed_ms(t0);
  return r;
}

void maybe_checkpoint(const std::string& out_dir, const TrainConfig& cfg, int step,
                      const LapPyrNet<float>& a, const LapPyrNet<float>& s) {
  if (out_dir.empty() || cfg.checkpoint_every <= 0) return;
  if ((step + 1) % cfg.checkpoint_every == 0)
    save_checkpoint(checkpoint_path(out_dir, step + 1, false), a, s);
}

}  // namespace

TrainResult train_joint(LapPyrNet<float>& albedo_net, LapPyrNet<float>& shading_net,
                        const Dataset& train_ds, const TrainConfig& cfg,
                        const FeatureExtractor<float>& fx, const std::string& out_dir) {
  validate_common(train_ds, cfg, albedo_net.config());
  TrainResult result;
  StepContext ctx{AdamState(albedo_net.parameters()), AdamState(shading_net.parameters()),
                  LogSink{{}, &result.log}};
  ctx.adam_albedo.set_clipping(cfg.clip_gradients, cfg.clip_norm);
  ctx.adam_shading.set_clipping(cfg.clip_gradients, cfg.clip_norm);
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    ctx.sink.file.open((fs::path(out_dir) / "train.log").string());
  }
  Rng data_rng(derive_seed(cfg.seed, 0xba7c4));

  for (int step = 0; step < cfg.steps; ++step) {
    const double lr = lr_at(cfg, step);
    auto batch = sample_batch(train_ds, data_rng, cfg.batch, cfg.crop, cfg.scale_min,
                              cfg.scale_max, cfg.flip_p);
    std::vector<Image> inputs, albedos, shadings;
    for (auto& s : batch) {
      inputs.push_back(std::move(s.input));
      albedos.push_back(std::move(s.albedo));
      shadings.push_back(std::move(s.shading));
    }
    Tensor<float> x = images_to_batch<float>(inputs);
    Tensor<float> gt_a = images_to_batch<float>(albedos);
    Tensor<float> gt_s = images_to_batch<float>(shadings);
    auto make_loss = [&] {
      Tensor<float> pred_a = albedo_net.forward(x).output;
      Tensor<float> pred_s = shading_net.forward(x).output;
      return compute_losses(pred_a, pred_s, gt_a, gt_s, x, fx, cfg.weights, cfg.bilateral);
    };
    ctx.sink.write(run_step(albedo_net, shading_net, ctx, step, lr, make_loss, {}, {}));
    maybe_checkpoint(out_dir, cfg, step, albedo_net, shading_net);
  }
  if (!out_dir.empty()) {
    result.final_checkpoint = checkpoint_path(out_dir, cfg.steps, true);
    save_checkpoint(result.final_checkpoint, albedo_net, shading_net);
  }
  return result;
}

namespace {

// Parameter mask for hierarchical stages: the stage's own block, optionally
// the blocks of earlier (coarser) stages, and always the samplers.
std::vector<bool> stage_mask(const LapPyrNet<float>& net, int level, bool freeze_lower) {
  const int K = net.config().levels;
  auto params = net.parameters();
  std::vector<bool> mask(params.size(), false);
  auto allow = [&](const std::string& prefix) {
    for (std::size_t i = 0; i < params.size(); ++i)
      if (params[i].name.rfind(prefix, 0) == 0) mask[i] = true;
  };
  allow("down");
  allow("up");
  if (level == K) {
    allow("low.");
  } else {
    allow("h" + std::to_string(level) + ".");
    if (!freeze_lower) {
      allow("low.");
      for (int k = level + 1; k < K; ++k) allow("h" + std::to_string(k) + ".");
    }
  }
  return mask;
}

}  // namespace

TrainResult train_hierarchical(LapPyrNet<float>& albedo_net, LapPyrNet<float>& shading_net,
                               const Dataset& train_ds, const TrainConfig& cfg,
                               const FeatureExtractor<float>& fx,
                               const std::string& out_dir) {
  check(albedo_net.config().variant == Variant::pyramid_d,
        "train_hierarchical: requires the pyramid_d variant");
  validate_common(train_ds, cfg, albedo_net.config());
  const int K = albedo_net.config().levels;

  TrainResult result;
  StepContext ctx{AdamState(albedo_net.parameters()), AdamState(shading_net.parameters()),
                  LogSink{{}, &result.log}};
  ctx.adam_albedo.set_clipping(cfg.clip_gradients, cfg.clip_norm);
  ctx.adam_shading.set_clipping(cfg.clip_gradients, cfg.clip_norm);
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    ctx.sink.file.open((fs::path(out_dir) / "train.log").string());
  }
  Rng data_rng(derive_seed(cfg.seed, 0xba7c4));

  const int stages = K + 1;
  const int per_stage = cfg.steps / stages;
  int step = 0;
  for (int stage = 0; stage < stages; ++stage) {
    const int level = K - stage;  // low band first
    const int stage_steps = stage == stages - 1 ? cfg.steps - per_stage * (stages - 1)
                                               : per_stage;
    const auto mask_a = stage_mask(albedo_net, level, cfg.freeze_lower);
    const auto mask_s = stage_mask(shading_net, level, cfg.freeze_lower);
    const int level_extent = cfg.crop >> level;
    // Perceptual taps need extents in multiples of 8; drop the term on
    // levels that are too coarse.
    LossWeights weights = cfg.weights;
    if (level_extent < FeatureExtractor<float>::kMinExtent ||
        level_extent % FeatureExtractor<float>::kMinExtent != 0)
      weights.lambda_p = 0.0;

    for (int s = 0; s < stage_steps; ++s, ++step) {
      const double lr = lr_at(cfg, step);
      auto batch = sample_batch(train_ds, data_rng, cfg.batch, cfg.crop, cfg.scale_min,
                                cfg.scale_max, cfg.flip_p);
      std::vector<Image> inputs, albedos, shadings;
      for (auto& b : batch) {
        ImagePyramid gi = gaussian_expand(b.input, level);
        ImagePyramid ga = gaussian_expand(b.albedo, level);
        ImagePyramid gs = gaussian_expand(b.shading, level);
        inputs.push_back(gi.levels.back());
        albedos.push_back(ga.levels.back());
        shadings.push_back(gs.levels.back());
      }
      // The network consumes the full-resolution input; targets live at the
      // stage's pyramid level.
      std::vector<Image> full_inputs;
      for (std::size_t i = 0; i < batch.size(); ++i) full_inputs.push_back(batch[i].input);
      Tensor<float> x = images_to_batch<float>(full_inputs);
      Tensor<float> gt_a = images_to_batch<float>(albedos);
      Tensor<float> gt_s = images_to_batch<float>(shadings);
      Tensor<float> in_level = images_to_batch<float>(inputs);
      auto make_loss = [&] {
        Tensor<float> pred_a = albedo_net.forward_partial(x, level);
        Tensor<float> pred_s = shading_net.forward_partial(x, level);
        LossParts<float> parts;
        parts.data = data_loss(pred_a, pred_s, gt_a, gt_s, in_level, cfg.bilateral);
        if (weights.lambda_p > 0)
          parts.perceptual = perceptual_loss(pred_a, pred_s, gt_a, gt_s, fx);
        else
          parts.perceptual = Tensor<float>::scalar(0.0f);
        parts.tv = tv_loss(pred_a, pred_s);
        parts.total = total_loss(parts.data, parts.perceptual, parts.tv, weights);
        return parts;
      };
      ctx.sink.write(
          run_step(albedo_net, shading_net, ctx, step, lr, make_loss, mask_a, mask_s));
      maybe_checkpoint(out_dir, cfg, step, albedo_net, shading_net);
    }
  }
  if (!out_dir.empty()) {
    result.final_checkpoint = checkpoint_path(out_dir, cfg.steps, true);
    save_checkpoint(result.final_checkpoint, albedo_net, shading_net);
  }
  return result;
}

MetricReport evaluate(const LapPyrNet<float>& albedo_net, const LapPyrNet<float>& shading_net,
                      const Dataset& test_ds) {
  if (test_ds.empty()) throw DataError("evaluate: dataset is empty");
  MetricReport report;
  for (std::size_t i = 0; i < test_ds.size(); ++i) {
    const SamplePair& p = test_ds.pair(i);
    auto [pred_a, pred_s] = decompose(albedo_net, shading_net, p.input);
    report.per_image.push_back(evaluate_pair(p.id, pred_a, p.albedo, pred_s, p.shading));
  }
  report.finalize();
  return report;
}

}  // namespace lappyr
