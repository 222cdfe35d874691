#include "lappyr/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>
#include <vector>

#include "lappyr/errors.hpp"

namespace lappyr {

namespace {

bool ends_with(const std::string& s, const std::string& suffix) {
  if (s.size() < suffix.size()) return false;
  return std::equal(suffix.rbegin(), suffix.rend(), s.rbegin(),
                    [](char a, char b) { return std::tolower(a) == std::tolower(b); });
}

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

bool host_is_little_endian() {
  const std::uint16_t probe = 1;
  return *reinterpret_cast<const unsigned char*>(&probe) == 1;
}

// PFM header: "PF"/"Pf", extents, scale (sign gives byte order).
struct PfmHeader {
  int channels, width, height;
  float scale;
  std::streampos data_start;
};

PfmHeader read_pfm_header(const std::string& path, std::ifstream& in) {
  if (!in) throw DataError("cannot open " + path);
  std::string magic;
  in >> magic;
  if (magic != "PF" && magic != "Pf") throw DataError(path + ": not a PFM file");
  PfmHeader h;
  h.channels = magic == "PF" ? 3 : 1;
  if (!(in >> h.width >> h.height >> h.scale))
    throw DataError(path + ": malformed PFM header");
  if (h.width <= 0 || h.height <= 0)
    throw DataError(path + ": non-positive PFM extents");
  in.get();  // single whitespace after the scale
  h.data_start = in.tellg();
  return h;
}

}  // namespace

Image read_pfm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  PfmHeader h = read_pfm_header(path, in);
  const bool file_little = h.scale < 0.0f;
  const float mag = std::abs(h.scale) == 0.0f ? 1.0f : std::abs(h.scale);
  const std::size_t count = static_cast<std::size_t>(h.width) * h.height * h.channels;
  std::vector<float> raw(count);
  in.read(reinterpret_cast<char*>(raw.data()),
          static_cast<std::streamsize>(count * sizeof(float)));
  if (!in) throw DataError(path + ": truncated PFM payload");
  if (file_little != host_is_little_endian()) {
    for (float& v : raw) {
      auto* b = reinterpret_cast<unsigned char*>(&v);
      std::swap(b[0], b[3]);
      std::swap(b[1], b[2]);
    }
  }
  Image img(h.channels, h.height, h.width);
  // PFM rows run bottom-up; samples are interleaved.
  for (int y = 0; y < h.height; ++y) {
    const int src_y = h.height - 1 - y;
    for (int x = 0; x < h.width; ++x)
      for (int c = 0; c < h.channels; ++c)
        img.at(c, y, x) =
            raw[(static_cast<std::size_t>(src_y) * h.width + x) * h.channels + c] * mag;
  }
  return img;
}

void write_pfm(const std::string& path, const Image& img) {
  if (img.channels != 1 && img.channels != 3)
    throw std::invalid_argument("write_pfm: expected 1 or 3 channels, got " +
                                std::to_string(img.channels));
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out << (img.channels == 3 ? "PF" : "Pf") << "\n"
      << img.width << " " << img.height << "\n"
      << "-1.0\n";
  std::vector<float> row(static_cast<std::size_t>(img.width) * img.channels);
  const bool need_swap = !host_is_little_endian();
  for (int y = img.height - 1; y >= 0; --y) {
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < img.channels; ++c)
        row[static_cast<std::size_t>(x) * img.channels + c] = img.at(c, y, x);
    if (need_swap) {
      for (float& v : row) {
        auto* b = reinterpret_cast<unsigned char*>(&v);
        std::swap(b[0], b[3]);
        std::swap(b[1], b[2]);
      }
    }
    out.write(reinterpret_cast<const char*>(row.data()),
              static_cast<std::streamsize>(row.size() * sizeof(float)));
  }
  if (!out) throw DataError("short write to " + path);
}

Image read_png(const std::string& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw DataError("cannot open " + path);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
    throw DataError(path + ": libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError(path + ": PNG decode failed");
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);

  const png_uint_32 w = png_get_image_width(png, info);
  const png_uint_32 h = png_get_image_height(png, info);
  const png_byte color = png_get_color_type(png, info);
  const png_byte depth = png_get_bit_depth(png, info);

  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);

  const int channels = png_get_channels(png, info);
  std::vector<png_byte> buf(static_cast<std::size_t>(h) * png_get_rowbytes(png, info));
  std::vector<png_bytep> rows(h);
  for (png_uint_32 y = 0; y < h; ++y)
    rows[y] = buf.data() + static_cast<std::size_t>(y) * png_get_rowbytes(png, info);
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  Image img(channels, static_cast<int>(h), static_cast<int>(w));
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < channels; ++c)
        img.at(c, y, x) =
            rows[y][static_cast<std::size_t>(x) * channels + c] / 255.0f;
  return img;
}

void write_png(const std::string& path, const Image& img) {
  if (img.channels != 1 && img.channels != 3)
    throw std::invalid_argument("write_png: expected 1 or 3 channels, got " +
                                std::to_string(img.channels));
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw DataError("cannot write " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
    throw DataError(path + ": libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw DataError(path + ": PNG encode failed");
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, img.width, img.height, 8,
               img.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);

  std::vector<png_byte> row(static_cast<std::size_t>(img.width) * img.channels);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < img.channels; ++c) {
        const float v = std::clamp(img.at(c, y, x), 0.0f, 1.0f);
        row[static_cast<std::size_t>(x) * img.channels + c] =
            static_cast<png_byte>(std::lround(v * 255.0f));
      }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Image read_image(const std::string& path) {
  if (ends_with(path, ".png")) return read_png(path);
  if (ends_with(path, ".pfm")) return read_pfm(path);
  throw DataError(path + ": unsupported image extension (expected .png or .pfm)");
}

void write_image(const std::string& path, const Image& img) {
  if (ends_with(path, ".png")) return write_png(path, img);
  if (ends_with(path, ".pfm")) return write_pfm(path, img);
  throw DataError(path + ": unsupported image extension (expected .png or .pfm)");
}

ImageHeader read_image_header(const std::string& path) {
  ImageHeader h;
  if (ends_with(path, ".pfm")) {
    std::ifstream in(path, std::ios::binary);
    PfmHeader p = read_pfm_header(path, in);
    h.channels = p.channels;
    h.height = p.height;
    h.width = p.width;
    return h;
  }
  if (ends_with(path, ".png")) {
    // Signature (8) + IHDR length/type (8) + width/height (big-endian u32 each)
    // + depth + color type.
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path);
    unsigned char hdr[26];
    in.read(reinterpret_cast<char*>(hdr), sizeof(hdr));
    if (!in) throw DataError(path + ": truncated PNG header");
    static const unsigned char sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
    if (std::memcmp(hdr, sig, 8) != 0 || std::memcmp(hdr + 12, "IHDR", 4) != 0)
      throw DataError(path + ": not a PNG file");
    auto be32 = [&](int off) {
      return (static_cast<unsigned>(hdr[off]) << 24) | (hdr[off + 1] << 16) |
             (hdr[off + 2] << 8) | hdr[off + 3];
    };
    h.width = static_cast<int>(be32(16));
    h.height = static_cast<int>(be32(20));
    const int color_type = hdr[25];
    h.channels = (color_type == PNG_COLOR_TYPE_GRAY || color_type == PNG_COLOR_TYPE_GRAY_ALPHA)
                     ? 1
                     : 3;
    return h;
  }
  throw DataError(path + ": unsupported image extension (expected .png or .pfm)");
}

}  // namespace lappyr
