#pragma once

#include <vector>

#include "lappyr/image.hpp"

namespace lappyr {

enum class PyramidKind { gaussian, laplacian };

struct ImagePyramid {
  std::vector<Image> levels;  // level 0 = full resolution
  PyramidKind kind = PyramidKind::gaussian;
  std::vector<float> kernel;  // 1-D separable taps, sum 1
  int reductions = 0;
};

// 5-tap [1/4-a/2, 1/4, a, 1/4, 1/4-a/2], normalized.
std::vector<float> burt_adelson_kernel(float a = 0.4f);

// Smooth (reflected borders) then decimate by 2. Extents must be even.
Image gaussian_reduce(const Image& img, const std::vector<float>& kernel);

// Zero-interleave to double extents, then smooth with 2x the kernel per axis
// so constants are preserved.
Image upsample(const Image& img, const std::vector<float>& kernel);

ImagePyramid gaussian_expand(const Image& img, int reductions,
                             const std::vector<float>& kernel = burt_adelson_kernel());

// Detail levels plus the low band: [L_0, ..., L_{K-1}, low]. Extents must be
// divisible by 2^K.
ImagePyramid laplacian_expand(const Image& img, int reductions,
                              const std::vector<float>& kernel = burt_adelson_kernel());

// Right-to-left reconstruction; requires a laplacian pyramid.
Image collapse(const ImagePyramid& pyr);

}  // namespace lappyr
