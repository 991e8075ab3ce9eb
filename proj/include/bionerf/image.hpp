// Copyright 2026 The bionerf-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "bionerf/errors.hpp"
#include "bionerf/tensor.hpp"

namespace bionerf {

/// Interleaved float image, row-major, values nominally in [0, 1].
struct Image {
  Index width = 0;
  Index height = 0;
  Index channels = 0;
  std::vector<float> data;

  Image() = default;
  Image(Index w, Index h, Index c, float fill = 0.0f) : width(w), height(h), channels(c), data(w * h * c, fill) {}

  float& at(Index x, Index y, Index c) { return data[(y * width + x) * channels + c]; }
  float at(Index x, Index y, Index c) const { return data[(y * width + x) * channels + c]; }
  Index pixels() const { return width * height; }
  bool same_shape(const Image& o) const {
    return width == o.width && height == o.height && channels == o.channels;
  }
};

/// Alpha-composites an RGBA image onto a constant background; RGB input is
/// returned unchanged.
inline Image composite_onto(const Image& rgba, const std::array<double, 3>& background) {
  if (rgba.channels == 3) return rgba;
  if (rgba.channels != 4) throw FormatError("expected RGB or RGBA image");
  Image out(rgba.width, rgba.height, 3);
  for (Index p = 0; p < rgba.pixels(); ++p) {
    const float a = rgba.data[p * 4 + 3];
    for (Index c = 0; c < 3; ++c) {
      out.data[p * 3 + c] = static_cast<float>(rgba.data[p * 4 + c] * a + background[c] * (1.0 - a));
    }
  }
  return out;
}

/// Float to 8-bit: clamp to [0,1], scale by 255, round half up.
inline std::uint8_t quantize_u8(float v) {
  const double x = std::clamp(static_cast<double>(v), 0.0, 1.0) * 255.0;
  return static_cast<std::uint8_t>(std::floor(x + 0.5));
}

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace detail

/// Writes an 8-bit RGB or RGBA PNG.
inline void write_png(const std::filesystem::path& path, const Image& image) {
  if (image.channels != 3 && image.channels != 4) throw FormatError("PNG output needs 3 or 4 channels");
  detail::FilePtr file(std::fopen(path.c_str(), "wb"));
  if (!file) throw IoError("cannot open " + path.string() + " for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng initialisation failed");
  }
  std::vector<std::uint8_t> bytes(image.data.size());
  std::transform(image.data.begin(), image.data.end(), bytes.begin(), quantize_u8);
  std::vector<png_bytep> rows(image.height);
  for (Index y = 0; y < image.height; ++y) rows[y] = bytes.data() + y * image.width * image.channels;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("failed writing " + path.string());
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(image.width), static_cast<png_uint_32>(image.height), 8,
               image.channels == 4 ? PNG_COLOR_TYPE_RGBA : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

/// Reads a PNG as floats in [0,1]. Gray and palette images are expanded to
/// RGB; the alpha channel is kept when present. 16-bit input is reduced to 8.
inline Image read_png(const std::filesystem::path& path) {
  detail::FilePtr file(std::fopen(path.c_str(), "rb"));
  if (!file) throw IoError("cannot open " + path.string());
  png_byte header[8];
  if (std::fread(header, 1, 8, file.get()) != 8 || png_sig_cmp(header, 0, 8)) {
    throw FormatError(path.string() + " is not a PNG file");
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("libpng initialisation failed");
  }
  Image image;
  std::vector<std::uint8_t> bytes;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError("corrupt PNG " + path.string());
  }
  png_init_io(png, file.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const auto color = png_get_color_type(png, info);
  if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
  if (png_get_bit_depth(png, info) < 8) png_set_expand(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  png_read_update_info(png, info);
  image.width = png_get_image_width(png, info);
  image.height = png_get_image_height(png, info);
  image.channels = png_get_channels(png, info);
  bytes.resize(image.width * image.height * image.channels);
  rows.resize(image.height);
  for (Index y = 0; y < image.height; ++y) rows[y] = bytes.data() + y * image.width * image.channels;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  image.data.resize(bytes.size());
  std::transform(bytes.begin(), bytes.end(), image.data.begin(), [](std::uint8_t b) { return b / 255.0f; });
  return image;
}

}  // namespace bionerf
