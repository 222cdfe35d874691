#include "lappyr/network.hpp"

#include <cmath>
#include <stdexcept>

#include "lappyr/rng.hpp"

namespace lappyr {

namespace {

void check(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

template <typename T>
Tensor<T> he_weight(Rng& rng, int co, int ci, int kh, int kw) {
  const double stddev = std::sqrt(2.0 / (static_cast<double>(ci) * kh * kw));
  std::vector<T> v(static_cast<std::size_t>(co) * ci * kh * kw);
  for (T& x : v) x = static_cast<T>(rng.gaussian(0.0, stddev));
  return Tensor<T>::from_data({co, ci, kh, kw}, std::move(v), true);
}

template <typename T>
ConvLayer<T> make_conv(Rng& rng, int ci, int co, int k) {
  ConvLayer<T> layer;
  layer.spec = ConvSpec{k, k, 1, Padding::reflect, ci, co};
  layer.weight = he_weight<T>(rng, co, ci, k, k);
  layer.bias = Tensor<T>::zeros({co}, true);
  return layer;
}

// Stride-2 5x5 smoothing conv; per-channel Burt-Adelson taps, no cross-channel
// mixing at init, so a constant image stays constant.
template <typename T>
ConvLayer<T> make_downsampler(int channels) {
  ConvLayer<T> layer;
  layer.spec = ConvSpec{5, 5, 2, Padding::reflect, channels, channels};
  const double k1[5] = {0.05, 0.25, 0.4, 0.25, 0.05};
  std::vector<T> w(static_cast<std::size_t>(channels) * channels * 25, T(0));
  for (int c = 0; c < channels; ++c)
    for (int ky = 0; ky < 5; ++ky)
      for (int kx = 0; kx < 5; ++kx)
        w[((static_cast<std::size_t>(c) * channels + c) * 5 + ky) * 5 + kx] =
            static_cast<T>(k1[ky] * k1[kx]);
  layer.weight = Tensor<T>::from_data({channels, channels, 5, 5}, std::move(w), true);
  layer.bias = Tensor<T>::zeros({channels}, true);
  return layer;
}

// Stride-2 4x4 transposed conv initialized to per-channel bilinear taps.
template <typename T>
ConvLayer<T> make_upsampler(int channels) {
  ConvLayer<T> layer;
  layer.spec = ConvSpec{4, 4, 2, Padding::zero, channels, channels};
  const double b1[4] = {0.25, 0.75, 0.75, 0.25};
  std::vector<T> w(static_cast<std::size_t>(channels) * channels * 16, T(0));
  for (int c = 0; c < channels; ++c)
    for (int ky = 0; ky < 4; ++ky)
      for (int kx = 0; kx < 4; ++kx)
        w[((static_cast<std::size_t>(c) * channels + c) * 4 + ky) * 4 + kx] =
            static_cast<T>(b1[ky] * b1[kx]);
  layer.weight = Tensor<T>::from_data({channels, channels, 4, 4}, std::move(w), true);
  return layer;
}

}  // namespace

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::sequential_a: return "sequential_a";
    case Variant::stacked_split_b: return "stacked_split_b";
    case Variant::parallel_c: return "parallel_c";
    case Variant::pyramid_d: return "pyramid_d";
  }
  return "unknown";
}

Variant variant_from_name(const std::string& name) {
  if (name == "sequential_a" || name == "a") return Variant::sequential_a;
  if (name == "stacked_split_b" || name == "b") return Variant::stacked_split_b;
  if (name == "parallel_c" || name == "c") return Variant::parallel_c;
  if (name == "pyramid_d" || name == "d") return Variant::pyramid_d;
  throw std::invalid_argument("unknown variant name: " + name);
}

template <typename T>
Tensor<T> Substructure<T>::forward(const Tensor<T>& x) const {
  Tensor<T> r = conv2(elu(conv1(x)));
  Tensor<T> skip = projection.weight.defined() ? projection(x) : x;
  return elu(add(r, skip));
}

template <typename T>
Tensor<T> ResidualBlock<T>::forward(const Tensor<T>& x) const {
  check(x.shape().size() == 4 && x.dim(1) == 3,
        "residual block: input must have 3 channels, got " +
            std::to_string(x.shape().size() == 4 ? x.dim(1) : -1));
  Tensor<T> t = x;
  for (const auto& s : subs) t = s.forward(t);
  return t;
}

template <typename T>
std::int64_t ResidualBlock<T>::parameter_count() const {
  std::int64_t n = 0;
  for (const auto& s : subs) {
    n += s.conv1.weight.numel() + s.conv1.bias.numel();
    n += s.conv2.weight.numel() + s.conv2.bias.numel();
    if (s.projection.weight.defined())
      n += s.projection.weight.numel() + s.projection.bias.numel();
  }
  return n;
}

namespace {

template <typename T>
ResidualBlock<T> make_block(Rng& rng, const NetConfig& cfg) {
  ResidualBlock<T> block;
  const int n = cfg.substructures;
  check(n >= 1, "residual block needs at least 1 substructure");
  for (int i = 0; i < n; ++i) {
    const int in = i == 0 ? 3 : cfg.hidden;
    const int out = i == n - 1 ? 3 : cfg.hidden;
    Substructure<T> s;
    s.conv1 = make_conv<T>(rng, in, cfg.hidden, 3);
    s.conv2 = make_conv<T>(rng, cfg.hidden, out, 3);
    if (in != out) s.projection = make_conv<T>(rng, in, out, 1);
    block.subs.push_back(std::move(s));
  }
  return block;
}

}  // namespace

template <typename T>
LapPyrNet<T> LapPyrNet<T>::build(const NetConfig& cfg, std::uint64_t seed) {
  check(cfg.hidden >= 1 && cfg.substructures >= 1, "invalid net config widths");
  LapPyrNet<T> net;
  net.cfg_ = cfg;
  net.seed_ = seed;
  Rng rng(seed);
  if (cfg.variant == Variant::pyramid_d) {
    check(cfg.levels >= 1, "pyramid_d requires levels >= 1");
    for (int k = 0; k < cfg.levels + 1; ++k) net.blocks_.push_back(make_block<T>(rng, cfg));
    for (int k = 0; k < cfg.levels; ++k) {
      net.down_.push_back(make_downsampler<T>(3));
      net.up_.push_back(make_upsampler<T>(3));
    }
  } else {
    // Two blocks: high band first, then the low branch.
    net.blocks_.push_back(make_block<T>(rng, cfg));
    net.blocks_.push_back(make_block<T>(rng, cfg));
    if (cfg.variant == Variant::parallel_c) {
      net.down_.push_back(make_downsampler<T>(3));
      net.up_.push_back(make_upsampler<T>(3));
    }
  }
  return net;
}

template <typename T>
Tensor<T> LapPyrNet<T>::apply_downsampler(int k, const Tensor<T>& x) const {
  return down_[static_cast<std::size_t>(k)](x);
}

template <typename T>
Tensor<T> LapPyrNet<T>::apply_upsampler(int k, const Tensor<T>& x) const {
  const auto& u = up_[static_cast<std::size_t>(k)];
  return conv2d_transpose(x, u.weight, u.spec);
}

template <typename T>
LapPyrForward<T> LapPyrNet<T>::forward(const Tensor<T>& input) const {
  check(input.shape().size() == 4 && input.dim(1) == 3,
        "lappyrnet forward: input must be [N,3,H,W]");
  LapPyrForward<T> out;
  if (cfg_.variant == Variant::pyramid_d) {
    const int K = cfg_.levels;
    const int div = 1 << K;
    check(input.dim(2) % div == 0 && input.dim(3) % div == 0,
          "lappyrnet forward: extents " + std::to_string(input.dim(2)) + "x" +
              std::to_string(input.dim(3)) + " must be divisible by 2^" + std::to_string(K));
    std::vector<Tensor<T>> cascade{input};
    for (int k = 0; k < K; ++k) cascade.push_back(apply_downsampler(k, cascade.back()));
    for (int k = 0; k < K; ++k)
      out.components.push_back(blocks_[static_cast<std::size_t>(k)].forward(cascade[static_cast<std::size_t>(k)]));
    out.components.push_back(blocks_.back().forward(cascade.back()));
    Tensor<T> agg = out.components.back();
    for (int k = K - 1; k >= 0; --k)
      agg = add(out.components[static_cast<std::size_t>(k)], apply_upsampler(k, agg));
    out.output = agg;
    return out;
  }
  const Tensor<T> high = blocks_[0].forward(input);
  if (cfg_.variant == Variant::parallel_c && !cfg_.identity_samplers) {
    check(input.dim(2) % 2 == 0 && input.dim(3) % 2 == 0,
          "lappyrnet forward: extents must be even for parallel_c");
    const Tensor<T> low = blocks_[1].forward(apply_downsampler(0, input));
    out.components = {high, low};
    out.output = add(high, apply_upsampler(0, low));
  } else {
    const Tensor<T> low = blocks_[1].forward(input);
    out.components = {high, low};
    out.output = add(high, low);
  }
  return out;
}

template <typename T>
Tensor<T> LapPyrNet<T>::forward_partial(const Tensor<T>& input, int level) const {
  check(cfg_.variant == Variant::pyramid_d, "forward_partial requires the pyramid_d variant");
  const int K = cfg_.levels;
  check(level >= 0 && level <= K, "forward_partial: level out of range");
  const int div = 1 << K;
  check(input.dim(2) % div == 0 && input.dim(3) % div == 0,
        "forward_partial: extents must be divisible by 2^" + std::to_string(K));
  std::vector<Tensor<T>> cascade{input};
  for (int k = 0; k < K; ++k) cascade.push_back(apply_downsampler(k, cascade.back()));
  Tensor<T> agg = blocks_.back().forward(cascade.back());
  for (int k = K - 1; k >= level; --k)
    agg = add(blocks_[static_cast<std::size_t>(k)].forward(cascade[static_cast<std::size_t>(k)]),
              apply_upsampler(k, agg));
  return agg;
}

namespace {

template <typename T>
void collect_layer(const std::string& name, const ConvLayer<T>& layer,
                   std::vector<NamedParam<T>>& out) {
  out.push_back({name + ".w", layer.weight});
  if (layer.bias.defined()) out.push_back({name + ".b", layer.bias});
}

template <typename T>
void collect_block(const std::string& prefix, const ResidualBlock<T>& block,
                   std::vector<NamedParam<T>>& out) {
  for (std::size_t i = 0; i < block.subs.size(); ++i) {
    const std::string base = prefix + ".sub" + std::to_string(i);
    collect_layer(base + ".conv1", block.subs[i].conv1, out);
    collect_layer(base + ".conv2", block.subs[i].conv2, out);
    if (block.subs[i].projection.weight.defined())
      collect_layer(base + ".proj", block.subs[i].projection, out);
  }
}

}  // namespace

template <typename T>
std::vector<NamedParam<T>> LapPyrNet<T>::parameters() const {
  std::vector<NamedParam<T>> out;
  const std::size_t high_count = blocks_.size() - 1;
  for (std::size_t k = 0; k < high_count; ++k)
    collect_block("h" + std::to_string(k), blocks_[k], out);
  collect_block("low", blocks_.back(), out);
  for (std::size_t k = 0; k < down_.size(); ++k)
    collect_layer("down" + std::to_string(k), down_[k], out);
  for (std::size_t k = 0; k < up_.size(); ++k)
    collect_layer("up" + std::to_string(k), up_[k], out);
  return out;
}

template <typename T>
std::int64_t LapPyrNet<T>::parameter_count() const {
  std::int64_t n = 0;
  for (const auto& p : parameters()) n += p.tensor.numel();
  return n;
}

template <typename T>
void LapPyrNet<T>::zero_grad() const {
  for (auto& p : parameters()) p.tensor.zero_grad();
}

template <typename T>
Tensor<T> image_to_tensor(const Image& img, bool requires_grad) {
  std::vector<T> v(img.data.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<T>(img.data[i]);
  return Tensor<T>::from_data({1, img.channels, img.height, img.width}, std::move(v),
                              requires_grad);
}

template <typename T>
Tensor<T> images_to_batch(const std::vector<Image>& imgs) {
  check(!imgs.empty(), "images_to_batch: empty batch");
  const Image& first = imgs.front();
  std::vector<T> v;
  v.reserve(imgs.size() * first.data.size());
  for (const Image& img : imgs) {
    check(img.same_extents(first), "images_to_batch: extent mismatch within batch");
    for (float x : img.data) v.push_back(static_cast<T>(x));
  }
  return Tensor<T>::from_data(
      {static_cast<int>(imgs.size()), first.channels, first.height, first.width},
      std::move(v));
}

template <typename T>
Image tensor_to_image(const Tensor<T>& t, int batch_index) {
  check(t.defined() && t.shape().size() == 4, "tensor_to_image: tensor must be [N,C,H,W]");
  check(batch_index >= 0 && batch_index < t.dim(0), "tensor_to_image: batch index out of range");
  Image img(t.dim(1), t.dim(2), t.dim(3));
  const std::size_t per = img.data.size();
  const T* src = t.data().data() + static_cast<std::size_t>(batch_index) * per;
  for (std::size_t i = 0; i < per; ++i) img.data[i] = static_cast<float>(src[i]);
  return img;
}

template <typename T>
std::pair<Image, Image> decompose(const LapPyrNet<T>& albedo_net,
                                  const LapPyrNet<T>& shading_net, const Image& input) {
  NoGradGuard no_grad;
  Tensor<T> x = image_to_tensor<T>(input);
  Image albedo = tensor_to_image(albedo_net.forward(x).output);
  Image shading = tensor_to_image(shading_net.forward(x).output);
  return {std::move(albedo), std::move(shading)};
}

template class LapPyrNet<float>;
template class LapPyrNet<double>;
template struct Substructure<float>;
template struct Substructure<double>;
template struct ResidualBlock<float>;
template struct ResidualBlock<double>;

template Tensor<float> image_to_tensor<float>(const Image&, bool);
template Tensor<double> image_to_tensor<double>(const Image&, bool);
template Tensor<float> images_to_batch<float>(const std::vector<Image>&);
template Tensor<double> images_to_batch<double>(const std::vector<Image>&);
template Image tensor_to_image<float>(const Tensor<float>&, int);
template Image tensor_to_image<double>(const Tensor<double>&, int);
template std::pair<Image, Image> decompose<float>(const LapPyrNet<float>&,
                                                  const LapPyrNet<float>&, const Image&);
template std::pair<Image, Image> decompose<double>(const LapPyrNet<double>&,
                                                   const LapPyrNet<double>&, const Image&);

}  // namespace lappyr
