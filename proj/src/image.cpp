#include "lappyr/image.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace lappyr {

namespace {
void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}
}  // namespace

Image hadamard(const Image& a, const Image& b) {
  require(a.same_extents(b), "hadamard: extent mismatch");
  Image out(a.channels, a.height, a.width);
  for (std::size_t i = 0; i < a.data.size(); ++i) out.data[i] = a.data[i] * b.data[i];
  return out;
}

std::vector<float> luminance(const Image& img) {
  std::vector<float> lum(img.pixel_count());
  if (img.channels == 1) {
    std::copy(img.data.begin(), img.data.end(), lum.begin());
    return lum;
  }
  require(img.channels == 3, "luminance: expected 1 or 3 channels, got " +
                                 std::to_string(img.channels));
  const float* r = img.plane(0);
  const float* g = img.plane(1);
  const float* b = img.plane(2);
  for (std::size_t i = 0; i < lum.size(); ++i)
    lum[i] = 0.299f * r[i] + 0.587f * g[i] + 0.114f * b[i];
  return lum;
}

Image flip_horizontal(const Image& img) {
  Image out(img.channels, img.height, img.width);
  for (int c = 0; c < img.channels; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x)
        out.at(c, y, x) = img.at(c, y, img.width - 1 - x);
  return out;
}

Image crop(const Image& img, int y0, int x0, int h, int w) {
  require(y0 >= 0 && x0 >= 0 && h > 0 && w > 0 && y0 + h <= img.height &&
              x0 + w <= img.width,
          "crop: window exceeds image extents");
  Image out(img.channels, h, w);
  for (int c = 0; c < img.channels; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) out.at(c, y, x) = img.at(c, y0 + y, x0 + x);
  return out;
}

Image resize_bilinear(const Image& img, int out_h, int out_w) {
  require(out_h > 0 && out_w > 0, "resize_bilinear: non-positive extents");
  if (out_h == img.height && out_w == img.width) return img;
  Image out(img.channels, out_h, out_w);
  const double sy = static_cast<double>(img.height) / out_h;
  const double sx = static_cast<double>(img.width) / out_w;
  for (int c = 0; c < img.channels; ++c) {
    const float* src = img.plane(c);
    float* dst = out.plane(c);
    for (int y = 0; y < out_h; ++y) {
      double fy = (y + 0.5) * sy - 0.5;
      fy = std::clamp(fy, 0.0, static_cast<double>(img.height - 1));
      const int y0 = static_cast<int>(fy);
      const int y1 = std::min(y0 + 1, img.height - 1);
      const double wy = fy - y0;
      for (int x = 0; x < out_w; ++x) {
        double fx = (x + 0.5) * sx - 0.5;
        fx = std::clamp(fx, 0.0, static_cast<double>(img.width - 1));
        const int x0 = static_cast<int>(fx);
        const int x1 = std::min(x0 + 1, img.width - 1);
        const double wx = fx - x0;
        const double top = (1.0 - wx) * src[y0 * img.width + x0] + wx * src[y0 * img.width + x1];
        const double bot = (1.0 - wx) * src[y1 * img.width + x0] + wx * src[y1 * img.width + x1];
        dst[y * out_w + x] = static_cast<float>((1.0 - wy) * top + wy * bot);
      }
    }
  }
  return out;
}

Image clamp01(const Image& img) {
  Image out = img;
  for (float& v : out.data) v = std::clamp(v, 0.0f, 1.0f);
  return out;
}

Image clamp_min(const Image& img, float lo) {
  Image out = img;
  for (float& v : out.data) v = std::max(v, lo);
  return out;
}

Image expand_to_rgb(const Image& img) {
  if (img.channels == 3) return img;
  require(img.channels == 1, "expand_to_rgb: expected 1 or 3 channels");
  Image out(3, img.height, img.width);
  for (int c = 0; c < 3; ++c)
    std::copy(img.data.begin(), img.data.end(), out.plane(c));
  return out;
}

float max_abs_diff(const Image& a, const Image& b) {
  require(a.same_extents(b), "max_abs_diff: extent mismatch");
  float m = 0.0f;
  for (std::size_t i = 0; i < a.data.size(); ++i)
    m = std::max(m, std::abs(a.data[i] - b.data[i]));
  return m;
}

bool all_finite(const Image& img) {
  for (float v : img.data)
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace lappyr
