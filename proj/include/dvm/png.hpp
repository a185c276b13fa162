#pragma once

#include "dvm/common.hpp"
#include "dvm/projection.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <vector>

namespace dvm::io {

/// 8-bit RGB bytes, channel values in [0, 1] rounded to nearest.
inline std::vector<std::uint8_t> to_rgb8(const ColorImage& img) {
  std::vector<std::uint8_t> out(img.rgb.size());
  for (std::size_t i = 0; i < img.rgb.size(); ++i)
    out[i] = static_cast<std::uint8_t>(std::lround(std::clamp(img.rgb[i], 0.0, 1.0) * 255.0));
  return out;
}

inline void write_png(const std::filesystem::path& path, const ColorImage& img) {
  require(img.rgb.size() == img.height * img.width * 3, "write_png: pixel buffer size mismatch");
  const auto bytes = to_rgb8(img);
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "wb"), &std::fclose);
  if (!fp) throw FormatError("cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw FormatError("write_png: libpng initialization failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw FormatError("write_png: libpng error while writing " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height),
               8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t u = 0; u < img.height; ++u)
    png_write_row(png, bytes.data() + u * img.width * 3);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace dvm::io
