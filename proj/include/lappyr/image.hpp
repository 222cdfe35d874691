#pragma once

#include <cstddef>
#include <vector>

namespace lappyr {

// Planar CHW float image. Values are linear intensities, nominally in [0, 1]
// but not clamped except at 8-bit serialization boundaries.
struct Image {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<float> data;

  Image() = default;
  Image(int c, int h, int w, float fill = 0.0f)
      : channels(c),
        height(h),
        width(w),
        data(static_cast<std::size_t>(c) * h * w, fill) {}

  float& at(int c, int y, int x) {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  float at(int c, int y, int x) const {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  float* plane(int c) { return data.data() + static_cast<std::size_t>(c) * height * width; }
  const float* plane(int c) const {
    return data.data() + static_cast<std::size_t>(c) * height * width;
  }
  std::size_t pixel_count() const { return static_cast<std::size_t>(height) * width; }
  bool same_extents(const Image& o) const {
    return channels == o.channels && height == o.height && width == o.width;
  }
};

// Pointwise product; shapes must match.
Image hadamard(const Image& a, const Image& b);

// Rec.601 luma for 3-channel images; identity for single-channel.
std::vector<float> luminance(const Image& img);

Image flip_horizontal(const Image& img);
Image crop(const Image& img, int y0, int x0, int h, int w);
Image resize_bilinear(const Image& img, int out_h, int out_w);
Image clamp01(const Image& img);
Image clamp_min(const Image& img, float lo);
Image expand_to_rgb(const Image& img);  // replicate a single channel to 3

float max_abs_diff(const Image& a, const Image& b);
bool all_finite(const Image& img);

}  // namespace lappyr
