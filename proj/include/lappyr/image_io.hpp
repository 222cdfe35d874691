#pragma once

#include <string>

#include "lappyr/image.hpp"

namespace lappyr {

struct ImageHeader {
  int channels = 0;
  int height = 0;
  int width = 0;
};

// Dispatch by extension: .png or .pfm. PNG values map as v/255 (8-bit);
// PFM stores raw little-endian floats, rows bottom-up, scale header -1.0.
Image read_image(const std::string& path);
void write_image(const std::string& path, const Image& img);

// Extents without decoding pixel data.
ImageHeader read_image_header(const std::string& path);

Image read_png(const std::string& path);
void write_png(const std::string& path, const Image& img);  // clamps to [0,1]

Image read_pfm(const std::string& path);
void write_pfm(const std::string& path, const Image& img);

}  // namespace lappyr
