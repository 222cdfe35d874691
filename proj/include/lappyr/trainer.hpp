#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lappyr/datapipe.hpp"
#include "lappyr/losses.hpp"
#include "lappyr/metrics.hpp"
#include "lappyr/network.hpp"

namespace lappyr {

enum class TrainScheme { joint, hierarchical };

struct TrainConfig {
  int batch = 8;
  int crop = 256;
  double scale_min = 0.8;
  double scale_max = 1.2;
  double flip_p = 0.5;
  double lr_start = 1e-4;
  double lr_end = 1e-6;
  int steps = 1;
  TrainScheme scheme = TrainScheme::joint;
  std::uint64_t seed = 0;
  LossWeights weights;
  BilateralParams bilateral;
  int checkpoint_every = 0;  // 0 = final checkpoint only
  bool freeze_lower = false; // hierarchical: freeze blocks from earlier stages
  bool clip_gradients = false;
  double clip_norm = 10.0;

  static TrainConfig desk() {
    TrainConfig c;
    c.batch = 2;
    c.crop = 64;
    return c;
  }
};

// Geometric interpolation between the endpoints: lr_at(cfg, 0) == lr_start and
// lr_at(cfg, cfg.steps) == lr_end.
double lr_at(const TrainConfig& cfg, int step);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Bias-corrected Adam over a fixed parameter list. Parameters without an
// accumulated gradient are skipped; non-finite gradients abort.
class AdamState {
 public:
  explicit AdamState(std::vector<NamedParam<float>> params, AdamConfig cfg = {});

  void step(double lr);
  // Updates only parameters whose mask entry is true (moments still advance
  // uniformly with the step counter).
  void step(double lr, const std::vector<bool>& update_mask);

  // Optional global-norm clipping applied before the moment updates.
  void set_clipping(bool enabled, double max_norm) {
    clipping_ = enabled;
    clip_norm_ = max_norm;
  }

  int step_count() const { return t_; }
  const std::vector<NamedParam<float>>& params() const { return params_; }

 private:
  AdamConfig cfg_;
  int t_ = 0;
  bool clipping_ = false;
  double clip_norm_ = 10.0;
  std::vector<NamedParam<float>> params_;
  std::vector<std::vector<float>> m_;
  std::vector<std::vector<float>> v_;
};

struct LogRecord {
  int step = 0;
  double lr = 0.0;
  double total = 0.0;
  double data = 0.0;
  double perceptual = 0.0;
  double tv = 0.0;
  double wall_ms = 0.0;
};

struct TrainResult {
  std::vector<LogRecord> log;
  std::string final_checkpoint;  // empty when no out_dir was given
};

// One loss on the full-resolution aggregate. When out_dir is non-empty,
// checkpoints and a line-oriented train.log are written there.
TrainResult train_joint(LapPyrNet<float>& albedo_net, LapPyrNet<float>& shading_net,
                        const Dataset& train_ds, const TrainConfig& cfg,
                        const FeatureExtractor<float>& fx, const std::string& out_dir = "");

// Coarse-to-fine stages (low band first); stage k fits the partial aggregate
// at pyramid level k against reference Gaussian-level targets. Requires the
// pyramid_d variant.
TrainResult train_hierarchical(LapPyrNet<float>& albedo_net, LapPyrNet<float>& shading_net,
                               const Dataset& train_ds, const TrainConfig& cfg,
                               const FeatureExtractor<float>& fx,
                               const std::string& out_dir = "");

MetricReport evaluate(const LapPyrNet<float>& albedo_net, const LapPyrNet<float>& shading_net,
                      const Dataset& test_ds);

}  // namespace lappyr
