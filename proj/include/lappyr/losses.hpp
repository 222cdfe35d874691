#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lappyr/image.hpp"
#include "lappyr/tensor.hpp"

namespace lappyr {

struct LossWeights {
  double lambda_d = 1.0;
  double lambda_p = 0.5;
  double lambda_t = 1e-4;
};

struct BilateralParams {
  double sigma_s = 1.0;
  // Range width. When adaptive, sigma_r is taken per image as
  // max(0.05, stddev of the guide luminance) and the fixed value is ignored.
  double sigma_r = 0.1;
  bool adaptive_sigma_r = true;
  int window = 5;  // odd neighborhood extent
};

// Range weights come from the guide (held constant), values from pred.
// Differentiable with respect to pred. Borders truncate the neighborhood;
// the normalization adapts, so constants are preserved exactly.
template <typename T>
Tensor<T> joint_bilateral_filter(const Tensor<T>& pred, const Tensor<T>& guide,
                                 const BilateralParams& p);
Image joint_bilateral_filter(const Image& pred, const Image& guide,
                             const BilateralParams& p);

// Fixed (non-trainable) convolution/ELU/pool stack exposing four activation
// taps at full, 1/2, 1/4 and 1/8 resolution. The default is a seeded random
// surrogate; weights may also be loaded from a tensor container file.
template <typename T>
class FeatureExtractor {
 public:
  static constexpr std::uint64_t kDefaultSeed = 0x5eed0f0eau;
  static constexpr int kMinExtent = 8;

  static FeatureExtractor surrogate(std::uint64_t seed = kDefaultSeed);
  static FeatureExtractor load_file(const std::string& path);
  void save_file(const std::string& path) const;

  std::vector<Tensor<T>> taps(const Tensor<T>& x) const;
  const std::vector<int>& stage_channels() const { return channels_; }

 private:
  std::vector<Tensor<T>> weights_;  // [Co,Ci,3,3] per stage
  std::vector<Tensor<T>> biases_;
  std::vector<int> channels_;
};

// Bilateral-filtered fidelity for albedo and shading plus the product
// reconstruction term, each a mean of squared residuals over all elements:
//   mse(JBF(pred_a | gt_a), gt_a) + mse(JBF(pred_s | gt_s), gt_s)
//   + mse(pred_a * pred_s, input)
template <typename T>
Tensor<T> data_loss(const Tensor<T>& pred_albedo, const Tensor<T>& pred_shading,
                    const Tensor<T>& gt_albedo, const Tensor<T>& gt_shading,
                    const Tensor<T>& input, const BilateralParams& p);

// Sum over both targets and the four taps of mean squared activation
// differences (each tap normalized by its element count).
template <typename T>
Tensor<T> perceptual_loss(const Tensor<T>& pred_albedo, const Tensor<T>& pred_shading,
                          const Tensor<T>& gt_albedo, const Tensor<T>& gt_shading,
                          const FeatureExtractor<T>& fx);

// Anisotropic L1 total variation of both predictions (a raw sum, not a mean).
template <typename T>
Tensor<T> tv_loss(const Tensor<T>& pred_albedo, const Tensor<T>& pred_shading);

template <typename T>
Tensor<T> total_loss(const Tensor<T>& data, const Tensor<T>& perceptual,
                     const Tensor<T>& tv, const LossWeights& w);

template <typename T>
struct LossParts {
  Tensor<T> data, perceptual, tv, total;
};

template <typename T>
LossParts<T> compute_losses(const Tensor<T>& pred_albedo, const Tensor<T>& pred_shading,
                            const Tensor<T>& gt_albedo, const Tensor<T>& gt_shading,
                            const Tensor<T>& input, const FeatureExtractor<T>& fx,
                            const LossWeights& w, const BilateralParams& p);

extern template class FeatureExtractor<float>;
extern template class FeatureExtractor<double>;

}  // namespace lappyr
