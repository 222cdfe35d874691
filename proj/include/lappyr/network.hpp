#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "lappyr/image.hpp"
#include "lappyr/tensor.hpp"

namespace lappyr {

// The four architecture variants. All predict the target from the input; they
// differ in how the low-frequency branch is wired and where losses attach:
//  - sequential_a:    out = H(x) + L(x), one loss on out
//  - stacked_split_b: same forward map, per-band losses on H and L outputs
//  - parallel_c:      L runs at half resolution behind learnable samplers,
//                     out = H(x) + up(L(down(x))), one loss on out
//  - pyramid_d:       K high-band blocks on a learnable downsampling cascade
//                     plus a low-band block, aggregated right to left
enum class Variant { sequential_a, stacked_split_b, parallel_c, pyramid_d };

std::string variant_name(Variant v);
Variant variant_from_name(const std::string& name);

struct NetConfig {
  int levels = 4;
  int hidden = 32;
  int substructures = 6;
  Variant variant = Variant::pyramid_d;
  // Diagnostic: run scale branches at full resolution, skipping the samplers.
  bool identity_samplers = false;

  static NetConfig paper() { return {}; }
  static NetConfig desk() {
    NetConfig c;
    c.levels = 2;
    c.hidden = 16;
    c.substructures = 2;
    return c;
  }
};

template <typename T>
struct ConvLayer {
  ConvSpec spec;
  Tensor<T> weight;
  Tensor<T> bias;  // undefined = no bias

  Tensor<T> operator()(const Tensor<T>& x) const { return conv2d(x, weight, bias, spec); }
};

// Conv(3x3) -> ELU -> Conv(3x3) -> (+ skip) -> ELU. The skip path carries a
// 1x1 projection exactly when input and output widths differ.
template <typename T>
struct Substructure {
  ConvLayer<T> conv1;
  ConvLayer<T> conv2;
  ConvLayer<T> projection;  // weight undefined = identity skip

  Tensor<T> forward(const Tensor<T>& x) const;
};

template <typename T>
struct ResidualBlock {
  std::vector<Substructure<T>> subs;

  Tensor<T> forward(const Tensor<T>& x) const;
  std::int64_t parameter_count() const;
};

template <typename T>
struct NamedParam {
  std::string name;
  Tensor<T> tensor;
};

template <typename T>
struct LapPyrForward {
  Tensor<T> output;
  // Finest to coarsest; the last entry is the low band. For pyramid_d,
  // components[k] lives at 1/2^k of the input extents.
  std::vector<Tensor<T>> components;
};

template <typename T>
class LapPyrNet {
 public:
  LapPyrNet() = default;

  // He-initialized blocks; samplers start as fixed smoothing/bilinear kernels.
  static LapPyrNet build(const NetConfig& cfg, std::uint64_t seed);

  LapPyrForward<T> forward(const Tensor<T>& input) const;

  // Aggregate of the branches at pyramid level `level` (pyramid_d only);
  // extents are input/2^level.
  Tensor<T> forward_partial(const Tensor<T>& input, int level) const;

  std::vector<NamedParam<T>> parameters() const;
  std::int64_t parameter_count() const;
  void zero_grad() const;

  const NetConfig& config() const { return cfg_; }
  std::uint64_t seed() const { return seed_; }
  int block_count() const { return static_cast<int>(blocks_.size()); }
  int sampler_count() const { return static_cast<int>(down_.size()); }

  std::vector<ResidualBlock<T>>& blocks() { return blocks_; }
  const std::vector<ResidualBlock<T>>& blocks() const { return blocks_; }
  std::vector<ConvLayer<T>>& downsamplers() { return down_; }
  const std::vector<ConvLayer<T>>& downsamplers() const { return down_; }
  std::vector<ConvLayer<T>>& upsamplers() { return up_; }
  const std::vector<ConvLayer<T>>& upsamplers() const { return up_; }

  Tensor<T> apply_downsampler(int k, const Tensor<T>& x) const;
  Tensor<T> apply_upsampler(int k, const Tensor<T>& x) const;

 private:
  NetConfig cfg_;
  std::uint64_t seed_ = 0;
  std::vector<ResidualBlock<T>> blocks_;  // H_0..H_{K-1}, then the low block
  std::vector<ConvLayer<T>> down_;
  std::vector<ConvLayer<T>> up_;  // transposed convolutions
};

// Conversions between images and [N,3,H,W] tensors.
template <typename T>
Tensor<T> image_to_tensor(const Image& img, bool requires_grad = false);
template <typename T>
Tensor<T> images_to_batch(const std::vector<Image>& imgs);
template <typename T>
Image tensor_to_image(const Tensor<T>& t, int batch_index = 0);

// Runs both nets on one image without recording gradients. Outputs are the
// raw network values; clamping happens only at serialization.
template <typename T>
std::pair<Image, Image> decompose(const LapPyrNet<T>& albedo_net,
                                  const LapPyrNet<T>& shading_net, const Image& input);

extern template class LapPyrNet<float>;
extern template class LapPyrNet<double>;

}  // namespace lappyr
