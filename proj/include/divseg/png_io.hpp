#pragma once

#include <png.h>

#include <array>
#include <cstdio>
#include <cstring>
#include <memory>
#include <string>
#include <vector>

#include "divseg/colorcore.hpp"
#include "divseg/errors.hpp"
#include "divseg/image.hpp"

namespace divseg {

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

struct PngReader {
  png_structp png = nullptr;
  png_infop info = nullptr;
  FilePtr file;

  explicit PngReader(const std::string& path) {
    file.reset(std::fopen(path.c_str(), "rb"));
    if (!file) throw IoError("cannot open " + path);
    png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) throw IoError("libpng read failure: " + path);
    png_init_io(png, file.get());
    png_read_info(png, info);
  }
  ~PngReader() { png_destroy_read_struct(&png, &info, nullptr); }
  PngReader(const PngReader&) = delete;
  PngReader& operator=(const PngReader&) = delete;
};

struct PngWriter {
  png_structp png = nullptr;
  png_infop info = nullptr;
  FilePtr file;

  explicit PngWriter(const std::string& path) {
    file.reset(std::fopen(path.c_str(), "wb"));
    if (!file) throw IoError("cannot open " + path + " for writing");
    png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) throw IoError("libpng write failure: " + path);
    png_init_io(png, file.get());
  }
  ~PngWriter() { png_destroy_write_struct(&png, &info); }
  PngWriter(const PngWriter&) = delete;
  PngWriter& operator=(const PngWriter&) = delete;
};

}  // namespace detail

// Decodes an sRGB-encoded 8/16-bit PNG and linearizes it.
inline PlanarImage load_png_image(const std::string& path) {
  detail::PngReader r(path);
  if (setjmp(png_jmpbuf(r.png))) throw IoError("libpng read failure: " + path);

  png_set_palette_to_rgb(r.png);
  png_set_expand_gray_1_2_4_to_8(r.png);
  if (png_get_valid(r.png, r.info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(r.png);
  png_set_strip_alpha(r.png);
  png_set_gray_to_rgb(r.png);
  png_read_update_info(r.png, r.info);

  const int w = static_cast<int>(png_get_image_width(r.png, r.info));
  const int h = static_cast<int>(png_get_image_height(r.png, r.info));
  const int depth = png_get_bit_depth(r.png, r.info);
  if (png_get_channels(r.png, r.info) != 3)
    throw IoError("unexpected channel count in " + path);

  const std::size_t rowbytes = png_get_rowbytes(r.png, r.info);
  std::vector<png_byte> buf(rowbytes * h);
  std::vector<png_bytep> rows(h);
  for (int y = 0; y < h; ++y) rows[y] = buf.data() + rowbytes * y;
  png_read_image(r.png, rows.data());

  PlanarImage img(w, h, ColorSpace::LinearRGB);
  for (int y = 0; y < h; ++y) {
    const png_byte* row = rows[y];
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        double v;
        if (depth == 16) {
          const int i = (x * 3 + c) * 2;
          v = static_cast<double>((row[i] << 8) | row[i + 1]) / 65535.0;
        } else {
          v = static_cast<double>(row[x * 3 + c]) / 255.0;
        }
        img.at(c, y, x) = srgb_to_linear(v);
      }
    }
  }
  return img;
}

// Encodes a linear-RGB image to an 8- or 16-bit sRGB PNG. Samples are
// clamped to [0,1] before encoding.
inline void save_png_image(const std::string& path, const PlanarImage& img,
                           int bit_depth = 8) {
  if (img.space() != ColorSpace::LinearRGB)
    throw InvalidInput("save_png_image: expects linear RGB");
  if (bit_depth != 8 && bit_depth != 16)
    throw InvalidInput("save_png_image: bit depth must be 8 or 16");
  detail::PngWriter wr(path);
  if (setjmp(png_jmpbuf(wr.png))) throw IoError("libpng write failure: " + path);

  const int w = img.width(), h = img.height();
  png_set_IHDR(wr.png, wr.info, w, h, bit_depth, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(wr.png, wr.info);

  const int bytes = bit_depth / 8;
  std::vector<png_byte> row(static_cast<std::size_t>(w) * 3 * bytes);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        const double lin = std::clamp(img.at(c, y, x), 0.0, 1.0);
        const double enc = linear_to_srgb(lin);
        if (bit_depth == 16) {
          const auto q = static_cast<unsigned>(std::lround(enc * 65535.0));
          row[(x * 3 + c) * 2] = static_cast<png_byte>(q >> 8);
          row[(x * 3 + c) * 2 + 1] = static_cast<png_byte>(q & 0xff);
        } else {
          row[x * 3 + c] = static_cast<png_byte>(std::lround(enc * 255.0));
        }
      }
    }
    png_write_row(wr.png, row.data());
  }
  png_write_end(wr.png, nullptr);
}

// Depth maps are single-channel 16-bit PNGs; stored value * scale = meters.
inline DepthMap load_png_depth(const std::string& path, double scale = 0.001) {
  detail::PngReader r(path);
  if (setjmp(png_jmpbuf(r.png))) throw IoError("libpng read failure: " + path);
  const int type = png_get_color_type(r.png, r.info);
  const int depth = png_get_bit_depth(r.png, r.info);
  if (type != PNG_COLOR_TYPE_GRAY || depth != 16)
    throw IoError("depth map must be 16-bit grayscale: " + path);
  png_read_update_info(r.png, r.info);

  const int w = static_cast<int>(png_get_image_width(r.png, r.info));
  const int h = static_cast<int>(png_get_image_height(r.png, r.info));
  const std::size_t rowbytes = png_get_rowbytes(r.png, r.info);
  std::vector<png_byte> buf(rowbytes * h);
  std::vector<png_bytep> rows(h);
  for (int y = 0; y < h; ++y) rows[y] = buf.data() + rowbytes * y;
  png_read_image(r.png, rows.data());

  DepthMap dm(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const int i = x * 2;
      dm.at(y, x) = static_cast<double>((rows[y][i] << 8) | rows[y][i + 1]) * scale;
    }
  return dm;
}

inline void save_png_depth(const std::string& path, const DepthMap& dm,
                           double scale = 0.001) {
  detail::PngWriter wr(path);
  if (setjmp(png_jmpbuf(wr.png))) throw IoError("libpng write failure: " + path);
  const int w = dm.width(), h = dm.height();
  png_set_IHDR(wr.png, wr.info, w, h, 16, PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(wr.png, wr.info);
  std::vector<png_byte> row(static_cast<std::size_t>(w) * 2);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double q = std::clamp(dm.at(y, x) / scale, 0.0, 65535.0);
      const auto v = static_cast<unsigned>(std::lround(q));
      row[x * 2] = static_cast<png_byte>(v >> 8);
      row[x * 2 + 1] = static_cast<png_byte>(v & 0xff);
    }
    png_write_row(wr.png, row.data());
  }
  png_write_end(wr.png, nullptr);
}

using Palette = std::vector<std::array<unsigned char, 3>>;

// Label masks travel as single-channel indexed PNGs.
inline LabelMask load_png_mask(const std::string& path) {
  detail::PngReader r(path);
  if (setjmp(png_jmpbuf(r.png))) throw IoError("libpng read failure: " + path);
  const int type = png_get_color_type(r.png, r.info);
  if (type != PNG_COLOR_TYPE_PALETTE && type != PNG_COLOR_TYPE_GRAY)
    throw IoError("mask must be indexed or grayscale: " + path);
  if (png_get_bit_depth(r.png, r.info) < 8) png_set_packing(r.png);
  if (png_get_bit_depth(r.png, r.info) == 16) png_set_strip_16(r.png);
  png_read_update_info(r.png, r.info);

  const int w = static_cast<int>(png_get_image_width(r.png, r.info));
  const int h = static_cast<int>(png_get_image_height(r.png, r.info));
  const std::size_t rowbytes = png_get_rowbytes(r.png, r.info);
  std::vector<png_byte> buf(rowbytes * h);
  std::vector<png_bytep> rows(h);
  for (int y = 0; y < h; ++y) rows[y] = buf.data() + rowbytes * y;
  png_read_image(r.png, rows.data());

  LabelMask m(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) m.at(y, x) = rows[y][x];
  return m;
}

inline void save_png_mask(const std::string& path, const LabelMask& mask,
                          const Palette& palette) {
  detail::PngWriter wr(path);
  if (setjmp(png_jmpbuf(wr.png))) throw IoError("libpng write failure: " + path);
  const int w = mask.width(), h = mask.height();
  png_set_IHDR(wr.png, wr.info, w, h, 8, PNG_COLOR_TYPE_PALETTE,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  std::vector<png_color> plte(std::max<std::size_t>(palette.size(), 1));
  for (std::size_t i = 0; i < palette.size(); ++i)
    plte[i] = {palette[i][0], palette[i][1], palette[i][2]};
  png_set_PLTE(wr.png, wr.info, plte.data(), static_cast<int>(plte.size()));
  png_write_info(wr.png, wr.info);
  std::vector<png_byte> row(w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const int v = mask.at(y, x);
      if (v < 0 || v > 255) throw InvalidInput("save_png_mask: label out of byte range");
      row[x] = static_cast<png_byte>(v);
    }
    png_write_row(wr.png, row.data());
  }
  png_write_end(wr.png, nullptr);
}

}  // namespace divseg
