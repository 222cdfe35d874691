#include "lappyr/losses.hpp"

#include <cmath>
#include <memory>
#include <stdexcept>

#include "lappyr/checkpoint.hpp"
#include "lappyr/errors.hpp"
#include "lappyr/rng.hpp"

namespace lappyr {

namespace {

void check(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

void check_bilateral_params(const BilateralParams& p) {
  check(p.sigma_s > 0.0, "bilateral: sigma_s must be positive");
  check(p.window >= 1 && p.window % 2 == 1, "bilateral: window must be odd and >= 1");
  if (!p.adaptive_sigma_r) check(p.sigma_r > 0.0, "bilateral: fixed sigma_r must be positive");
}

double adaptive_sigma_r(const std::vector<double>& lum) {
  double mean = 0.0;
  for (double v : lum) mean += v;
  mean /= static_cast<double>(lum.size());
  double var = 0.0;
  for (double v : lum) var += (v - mean) * (v - mean);
  var /= static_cast<double>(lum.size());
  return std::max(0.05, std::sqrt(var));
}

template <typename T>
std::vector<double> guide_luminance(const T* guide, int C, int H, int W) {
  std::vector<double> lum(static_cast<std::size_t>(H) * W);
  if (C == 1) {
    for (std::size_t i = 0; i < lum.size(); ++i) lum[i] = static_cast<double>(guide[i]);
  } else {
    const std::size_t plane = lum.size();
    for (std::size_t i = 0; i < lum.size(); ++i)
      lum[i] = 0.299 * guide[i] + 0.587 * guide[plane + i] + 0.114 * guide[2 * plane + i];
  }
  return lum;
}

// Normalized weights for every pixel's truncated neighborhood, laid out
// [pixel][window*window]. Out-of-bounds taps stay zero.
std::vector<double> bilateral_weights(const std::vector<double>& lum, int H, int W,
                                      const BilateralParams& p) {
  const int r = p.window / 2;
  const int win2 = p.window * p.window;
  const double sigma_r = p.adaptive_sigma_r ? adaptive_sigma_r(lum) : p.sigma_r;
  const double inv2ss = 1.0 / (2.0 * p.sigma_s * p.sigma_s);
  const double inv2sr = 1.0 / (2.0 * sigma_r * sigma_r);
  std::vector<double> spatial(static_cast<std::size_t>(win2));
  for (int dy = -r; dy <= r; ++dy)
    for (int dx = -r; dx <= r; ++dx)
      spatial[static_cast<std::size_t>((dy + r) * p.window + dx + r)] =
          std::exp(-(static_cast<double>(dy) * dy + static_cast<double>(dx) * dx) * inv2ss);

  std::vector<double> weights(static_cast<std::size_t>(H) * W * win2, 0.0);
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      const std::size_t base = (static_cast<std::size_t>(y) * W + x) * win2;
      const double lp = lum[static_cast<std::size_t>(y) * W + x];
      double norm = 0.0;
      for (int dy = -r; dy <= r; ++dy) {
        const int qy = y + dy;
        if (qy < 0 || qy >= H) continue;
        for (int dx = -r; dx <= r; ++dx) {
          const int qx = x + dx;
          if (qx < 0 || qx >= W) continue;
          const double lq = lum[static_cast<std::size_t>(qy) * W + qx];
          const double d = lp - lq;
          const double w =
              spatial[static_cast<std::size_t>((dy + r) * p.window + dx + r)] *
              std::exp(-d * d * inv2sr);
          weights[base + static_cast<std::size_t>((dy + r) * p.window + dx + r)] = w;
          norm += w;
        }
      }
      for (int t = 0; t < win2; ++t) weights[base + static_cast<std::size_t>(t)] /= norm;
    }
  }
  return weights;
}

template <typename T>
void apply_bilateral(const T* src, T* dst, const std::vector<double>& weights, int C,
                     int H, int W, int window) {
  const int r = window / 2;
  const int win2 = window * window;
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  for (int c = 0; c < C; ++c) {
    const T* sp = src + static_cast<std::size_t>(c) * plane;
    T* dp = dst + static_cast<std::size_t>(c) * plane;
    for (int y = 0; y < H; ++y) {
      for (int x = 0; x < W; ++x) {
        const std::size_t base = (static_cast<std::size_t>(y) * W + x) * win2;
        double acc = 0.0;
        for (int dy = -r; dy <= r; ++dy) {
          const int qy = y + dy;
          if (qy < 0 || qy >= H) continue;
          for (int dx = -r; dx <= r; ++dx) {
            const int qx = x + dx;
            if (qx < 0 || qx >= W) continue;
            acc += weights[base + static_cast<std::size_t>((dy + r) * window + dx + r)] *
                   sp[static_cast<std::size_t>(qy) * W + qx];
          }
        }
        dp[static_cast<std::size_t>(y) * W + x] = static_cast<T>(acc);
      }
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> joint_bilateral_filter(const Tensor<T>& pred, const Tensor<T>& guide,
                                 const BilateralParams& p) {
  check(pred.defined() && guide.defined(), "joint_bilateral_filter: undefined input");
  check(pred.shape().size() == 4, "joint_bilateral_filter: pred must be [N,C,H,W]");
  check(pred.shape() == guide.shape(),
        "joint_bilateral_filter: pred and guide shapes must match");
  check_bilateral_params(p);
  const int N = pred.dim(0), C = pred.dim(1), H = pred.dim(2), W = pred.dim(3);
  check(C == 1 || C == 3, "joint_bilateral_filter: guide must have 1 or 3 channels");

  const std::size_t per_image = static_cast<std::size_t>(C) * H * W;
  auto weights = std::make_shared<std::vector<std::vector<double>>>();
  std::vector<T> out(pred.data().size());
  for (int n = 0; n < N; ++n) {
    const T* g = guide.data().data() + static_cast<std::size_t>(n) * per_image;
    const T* s = pred.data().data() + static_cast<std::size_t>(n) * per_image;
    auto lum = guide_luminance(g, C, H, W);
    weights->push_back(bilateral_weights(lum, H, W, p));
    apply_bilateral(s, out.data() + static_cast<std::size_t>(n) * per_image,
                    weights->back(), C, H, W, p.window);
  }

  Tensor<T> predc = pred;
  const int window = p.window;
  auto backprop = [predc, weights, N, C, H, W, window, per_image](TensorNode<T>& self) {
    if (!detail::on_grad_path(predc)) return;
    predc.node->ensure_grad();
    const int r = window / 2;
    const int win2 = window * window;
    const std::size_t plane = static_cast<std::size_t>(H) * W;
    for (int n = 0; n < N; ++n) {
      const std::vector<double>& wts = (*weights)[static_cast<std::size_t>(n)];
      const T* dy_img = self.grad.data() + static_cast<std::size_t>(n) * per_image;
      T* dx_img = predc.node->grad.data() + static_cast<std::size_t>(n) * per_image;
      for (int c = 0; c < C; ++c) {
        const T* dyp = dy_img + static_cast<std::size_t>(c) * plane;
        T* dxp = dx_img + static_cast<std::size_t>(c) * plane;
        for (int y = 0; y < H; ++y) {
          for (int x = 0; x < W; ++x) {
            const std::size_t base = (static_cast<std::size_t>(y) * W + x) * win2;
            const T g = dyp[static_cast<std::size_t>(y) * W + x];
            if (g == T(0)) continue;
            for (int dy2 = -r; dy2 <= r; ++dy2) {
              const int qy = y + dy2;
              if (qy < 0 || qy >= H) continue;
              for (int dx2 = -r; dx2 <= r; ++dx2) {
                const int qx = x + dx2;
                if (qx < 0 || qx >= W) continue;
                dxp[static_cast<std::size_t>(qy) * W + qx] += static_cast<T>(
                    g * wts[base + static_cast<std::size_t>((dy2 + r) * window + dx2 + r)]);
              }
            }
          }
        }
      }
    }
  };
  return detail::make_node<T>(pred.shape(), std::move(out), {pred}, std::move(backprop));
}

Image joint_bilateral_filter(const Image& pred, const Image& guide,
                             const BilateralParams& p) {
  check(pred.same_extents(guide), "joint_bilateral_filter: extent mismatch");
  check_bilateral_params(p);
  auto lum = guide_luminance(guide.data.data(), guide.channels, guide.height, guide.width);
  auto weights = bilateral_weights(lum, pred.height, pred.width, p);
  Image out(pred.channels, pred.height, pred.width);
  apply_bilateral(pred.data.data(), out.data.data(), weights, pred.channels, pred.height,
                  pred.width, p.window);
  return out;
}

// ---- feature extractor -------------------------------------------------------

template <typename T>
FeatureExtractor<T> FeatureExtractor<T>::surrogate(std::uint64_t seed) {
  FeatureExtractor<T> fx;
  fx.channels_ = {8, 16, 24, 32};
  Rng rng(seed);
  int in = 3;
  for (int out : fx.channels_) {
    const double stddev = std::sqrt(2.0 / (static_cast<double>(in) * 9.0));
    std::vector<T> w(static_cast<std::size_t>(out) * in * 9);
    for (T& v : w) v = static_cast<T>(rng.gaussian(0.0, stddev));
    fx.weights_.push_back(Tensor<T>::from_data({out, in, 3, 3}, std::move(w)));
    fx.biases_.push_back(Tensor<T>::zeros({out}));
    in = out;
  }
  return fx;
}

template <typename T>
FeatureExtractor<T> FeatureExtractor<T>::load_file(const std::string& path) {
  TensorContainer c = read_tensor_container(path);
  if (!c.config.contains("type") || c.config["type"] != "feature_extractor")
    throw DataError(path + ": not a feature-extractor weight file");
  FeatureExtractor<T> fx;
  try {
    fx.channels_ = c.config.at("channels").get<std::vector<int>>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path + ": corrupt feature-extractor config: " + e.what());
  }
  if (fx.channels_.size() != 4) throw DataError(path + ": extractor must have 4 stages");
  for (std::size_t s = 0; s < fx.channels_.size(); ++s) {
    const std::string wname = "stage" + std::to_string(s) + ".w";
    const std::string bname = "stage" + std::to_string(s) + ".b";
    const NamedParam<float>* w = nullptr;
    const NamedParam<float>* b = nullptr;
    for (const auto& t : c.tensors) {
      if (t.name == wname) w = &t;
      if (t.name == bname) b = &t;
    }
    if (!w || !b) throw DataError(path + ": missing tensors for stage " + std::to_string(s));
    std::vector<T> wv(w->tensor.data().begin(), w->tensor.data().end());
    std::vector<T> bv(b->tensor.data().begin(), b->tensor.data().end());
    fx.weights_.push_back(Tensor<T>::from_data(w->tensor.shape(), std::move(wv)));
    fx.biases_.push_back(Tensor<T>::from_data(b->tensor.shape(), std::move(bv)));
  }
  return fx;
}

template <typename T>
void FeatureExtractor<T>::save_file(const std::string& path) const {
  TensorContainer c;
  c.config = {{"type", "feature_extractor"}, {"channels", channels_}, {"kernel", 3}};
  for (std::size_t s = 0; s < weights_.size(); ++s) {
    std::vector<float> wv(weights_[s].data().begin(), weights_[s].data().end());
    std::vector<float> bv(biases_[s].data().begin(), biases_[s].data().end());
    c.tensors.push_back({"stage" + std::to_string(s) + ".w",
                         Tensor<float>::from_data(weights_[s].shape(), std::move(wv))});
    c.tensors.push_back({"stage" + std::to_string(s) + ".b",
                         Tensor<float>::from_data(biases_[s].shape(), std::move(bv))});
  }
  write_tensor_container(path, c);
}

template <typename T>
std::vector<Tensor<T>> FeatureExtractor<T>::taps(const Tensor<T>& x) const {
  check(x.defined() && x.shape().size() == 4 && x.dim(1) == 3,
        "feature extractor: input must be [N,3,H,W]");
  const int H = x.dim(2), W = x.dim(3);
  check(H >= kMinExtent && W >= kMinExtent && H % kMinExtent == 0 && W % kMinExtent == 0,
        "feature extractor: extents " + std::to_string(H) + "x" + std::to_string(W) +
            " too small for 4 tap points (need multiples of 8)");
  std::vector<Tensor<T>> out;
  Tensor<T> t = x;
  for (std::size_t s = 0; s < weights_.size(); ++s) {
    ConvSpec spec{3, 3, 1, Padding::reflect, 0, 0};
    t = elu(conv2d(t, weights_[s], biases_[s], spec));
    out.push_back(t);
    if (s + 1 < weights_.size()) t = avg_pool2(t);
  }
  return out;
}

// ---- losses -------------------------------------------------------------------

template <typename T>
Tensor<T> data_loss(const Tensor<T>& pred_albedo, const Tensor<T>& pred_shading,
                    const Tensor<T>& gt_albedo, const Tensor<T>& gt_shading,
                    const Tensor<T>& input, const BilateralParams& p) {
  check(pred_albedo.shape() == gt_albedo.shape() &&
            pred_shading.shape() == gt_shading.shape() &&
            pred_albedo.shape() == input.shape() &&
            pred_albedo.shape() == pred_shading.shape(),
        "data_loss: all images must share one shape");
  Tensor<T> fa = joint_bilateral_filter(pred_albedo, gt_albedo, p);
  Tensor<T> fs = joint_bilateral_filter(pred_shading, gt_shading, p);
  Tensor<T> fidelity = add(mse(fa, gt_albedo), mse(fs, gt_shading));
  Tensor<T> reconstruction = mse(mul(pred_albedo, pred_shading), input);
  return add(fidelity, reconstruction);
}

template <typename T>
Tensor<T> perceptual_loss(const Tensor<T>& pred_albedo, const Tensor<T>& pred_shading,
                          const Tensor<T>& gt_albedo, const Tensor<T>& gt_shading,
                          const FeatureExtractor<T>& fx) {
  auto tap_pa = fx.taps(pred_albedo);
  auto tap_ga = fx.taps(gt_albedo);
  auto tap_ps = fx.taps(pred_shading);
  auto tap_gs = fx.taps(gt_shading);
  Tensor<T> acc;
  for (std::size_t l = 0; l < tap_pa.size(); ++l) {
    Tensor<T> term = add(mse(tap_pa[l], tap_ga[l]), mse(tap_ps[l], tap_gs[l]));
    acc = acc.defined() ? add(acc, term) : term;
  }
  return acc;
}

template <typename T>
Tensor<T> tv_loss(const Tensor<T>& pred_albedo, const Tensor<T>& pred_shading) {
  return add(total_variation(pred_albedo), total_variation(pred_shading));
}

template <typename T>
Tensor<T> total_loss(const Tensor<T>& data, const Tensor<T>& perceptual,
                     const Tensor<T>& tv, const LossWeights& w) {
  check(w.lambda_d >= 0 && w.lambda_p >= 0 && w.lambda_t >= 0,
        "total_loss: weights must be non-negative");
  Tensor<T> out = scale(data, static_cast<T>(w.lambda_d));
  out = add(out, scale(perceptual, static_cast<T>(w.lambda_p)));
  out = add(out, scale(tv, static_cast<T>(w.lambda_t)));
  return out;
}

template <typename T>
LossParts<T> compute_losses(const Tensor<T>& pred_albedo, const Tensor<T>& pred_shading,
                            const Tensor<T>& gt_albedo, const Tensor<T>& gt_shading,
                            const Tensor<T>& input, const FeatureExtractor<T>& fx,
                            const LossWeights& w, const BilateralParams& p) {
  LossParts<T> parts;
  parts.data = data_loss(pred_albedo, pred_shading, gt_albedo, gt_shading, input, p);
  parts.perceptual =
      perceptual_loss(pred_albedo, pred_shading, gt_albedo, gt_shading, fx);
  parts.tv = tv_loss(pred_albedo, pred_shading);
  parts.total = total_loss(parts.data, parts.perceptual, parts.tv, w);
  return parts;
}

// ---- instantiation ------------------------------------------------------------

template class FeatureExtractor<float>;
template class FeatureExtractor<double>;

#define LAPPYR_INSTANTIATE_LOSSES(T)                                                     \
  template Tensor<T> joint_bilateral_filter<T>(const Tensor<T>&, const Tensor<T>&,       \
                                               const BilateralParams&);                  \
  template Tensor<T> data_loss<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,  \
                                  const Tensor<T>&, const Tensor<T>&,                    \
                                  const BilateralParams&);                               \
  template Tensor<T> perceptual_loss<T>(const Tensor<T>&, const Tensor<T>&,              \
                                        const Tensor<T>&, const Tensor<T>&,              \
                                        const FeatureExtractor<T>&);                     \
  template Tensor<T> tv_loss<T>(const Tensor<T>&, const Tensor<T>&);                     \
  template Tensor<T> total_loss<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, \
                                   const LossWeights&);                                  \
  template LossParts<T> compute_losses<T>(const Tensor<T>&, const Tensor<T>&,            \
                                          const Tensor<T>&, const Tensor<T>&,            \
                                          const Tensor<T>&, const FeatureExtractor<T>&,  \
                                          const LossWeights&, const BilateralParams&);

LAPPYR_INSTANTIATE_LOSSES(float)
LAPPYR_INSTANTIATE_LOSSES(double)

}  // namespace lappyr
