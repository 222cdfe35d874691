#include "lappyr/pyramid.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace lappyr {

namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

int reflect_index(int i, int n) {
  while (i < 0 || i >= n) {
    if (i < 0) i = -i - 1;
    if (i >= n) i = 2 * n - 1 - i;
  }
  return i;
}

// Separable smoothing with reflected borders, optional decimation on output.
Image smooth(const Image& img, const std::vector<float>& kernel, float gain) {
  const int r = static_cast<int>(kernel.size()) / 2;
  Image tmp(img.channels, img.height, img.width);
  for (int c = 0; c < img.channels; ++c) {
    const float* src = img.plane(c);
    float* dst = tmp.plane(c);
    for (int y = 0; y < img.height; ++y) {
      for (int x = 0; x < img.width; ++x) {
        double acc = 0.0;
        for (int k = -r; k <= r; ++k)
          acc += kernel[k + r] * src[y * img.width + reflect_index(x + k, img.width)];
        dst[y * img.width + x] = static_cast<float>(acc * gain);
      }
    }
  }
  Image out(img.channels, img.height, img.width);
  for (int c = 0; c < img.channels; ++c) {
    const float* src = tmp.plane(c);
    float* dst = out.plane(c);
    for (int y = 0; y < img.height; ++y) {
      for (int x = 0; x < img.width; ++x) {
        double acc = 0.0;
        for (int k = -r; k <= r; ++k)
          acc += kernel[k + r] * src[reflect_index(y + k, img.height) * img.width + x];
        dst[y * img.width + x] = static_cast<float>(acc * gain);
      }
    }
  }
  return out;
}

}  // namespace

std::vector<float> burt_adelson_kernel(float a) {
  std::vector<float> k = {0.25f - a / 2, 0.25f, a, 0.25f, 0.25f - a / 2};
  float s = 0.0f;
  for (float v : k) s += v;
  for (float& v : k) v /= s;
  return k;
}

Image gaussian_reduce(const Image& img, const std::vector<float>& kernel) {
  require(img.height % 2 == 0 && img.width % 2 == 0,
          "gaussian_reduce: extents must be even, got " + std::to_string(img.height) +
              "x" + std::to_string(img.width));
  Image smoothed = smooth(img, kernel, 1.0f);
  Image out(img.channels, img.height / 2, img.width / 2);
  for (int c = 0; c < img.channels; ++c)
    for (int y = 0; y < out.height; ++y)
      for (int x = 0; x < out.width; ++x)
        out.at(c, y, x) = smoothed.at(c, 2 * y, 2 * x);
  return out;
}

Image upsample(const Image& img, const std::vector<float>& kernel) {
  const int r = static_cast<int>(kernel.size()) / 2;
  const int H = img.height, W = img.width;
  // Zero-interleave then smooth at 2x gain per axis. Borders mirror in the
  // source domain (parity preserved), so constants survive at the edges too.
  Image tx(img.channels, H, 2 * W);
  for (int c = 0; c < img.channels; ++c) {
    const float* src = img.plane(c);
    float* dst = tx.plane(c);
    for (int y = 0; y < H; ++y) {
      for (int X = 0; X < 2 * W; ++X) {
        double acc = 0.0;
        for (int k = 0; k < static_cast<int>(kernel.size()); ++k) {
          const int p = X + k - r;
          if (p & 1) continue;  // interleaved zero
          acc += 2.0 * kernel[static_cast<std::size_t>(k)] *
                 src[y * W + reflect_index(p / 2, W)];
        }
        dst[y * 2 * W + X] = static_cast<float>(acc);
      }
    }
  }
  Image out(img.channels, 2 * H, 2 * W);
  for (int c = 0; c < img.channels; ++c) {
    const float* src = tx.plane(c);
    float* dst = out.plane(c);
    for (int Y = 0; Y < 2 * H; ++Y) {
      for (int X = 0; X < 2 * W; ++X) {
        double acc = 0.0;
        for (int k = 0; k < static_cast<int>(kernel.size()); ++k) {
          const int p = Y + k - r;
          if (p & 1) continue;
          acc += 2.0 * kernel[static_cast<std::size_t>(k)] *
                 src[reflect_index(p / 2, H) * 2 * W + X];
        }
        dst[Y * 2 * W + X] = static_cast<float>(acc);
      }
    }
  }
  return out;
}

ImagePyramid gaussian_expand(const Image& img, int reductions,
                             const std::vector<float>& kernel) {
  require(reductions >= 0, "gaussian_expand: reductions must be >= 0");
  const int div = 1 << reductions;
  require(img.height % div == 0 && img.width % div == 0,
          "gaussian_expand: extents " + std::to_string(img.height) + "x" +
              std::to_string(img.width) + " must be divisible by 2^" +
              std::to_string(reductions));
  ImagePyramid pyr;
  pyr.kind = PyramidKind::gaussian;
  pyr.kernel = kernel;
  pyr.reductions = reductions;
  pyr.levels.push_back(img);
  for (int k = 0; k < reductions; ++k)
    pyr.levels.push_back(gaussian_reduce(pyr.levels.back(), kernel));
  return pyr;
}

ImagePyramid laplacian_expand(const Image& img, int reductions,
                              const std::vector<float>& kernel) {
  require(reductions >= 0, "laplacian_expand: reductions must be >= 0");
  const int div = 1 << reductions;
  require(img.height % div == 0 && img.width % div == 0,
          "laplacian_expand: extents " + std::to_string(img.height) + "x" +
              std::to_string(img.width) + " must be divisible by 2^" +
              std::to_string(reductions));
  ImagePyramid pyr;
  pyr.kind = PyramidKind::laplacian;
  pyr.kernel = kernel;
  pyr.reductions = reductions;
  Image current = img;
  for (int k = 0; k < reductions; ++k) {
    Image next = gaussian_reduce(current, kernel);
    Image up = upsample(next, kernel);
    Image detail(current.channels, current.height, current.width);
    for (std::size_t i = 0; i < detail.data.size(); ++i)
      detail.data[i] = current.data[i] - up.data[i];
    pyr.levels.push_back(std::move(detail));
    current = std::move(next);
  }
  pyr.levels.push_back(std::move(current));
  return pyr;
}

Image collapse(const ImagePyramid& pyr) {
  require(pyr.kind == PyramidKind::laplacian, "collapse: pyramid kind must be laplacian");
  require(!pyr.levels.empty(), "collapse: empty pyramid");
  Image acc = pyr.levels.back();
  for (int k = static_cast<int>(pyr.levels.size()) - 2; k >= 0; --k) {
    Image up = upsample(acc, pyr.kernel);
    const Image& detail = pyr.levels[static_cast<std::size_t>(k)];
    require(up.same_extents(detail), "collapse: level extents do not nest");
    for (std::size_t i = 0; i < up.data.size(); ++i) up.data[i] += detail.data[i];
    acc = std::move(up);
  }
  return acc;
}

}  // namespace lappyr
