// Copyright 2026 The FEAT Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// 8-bit PNG export. Images map v in [-1, 1] to round(255 (v + 1) / 2);
// soft masks map m in [0, 1] to round(255 m); hard masks to {0, 255}. All
// mappings clamp to [0, 255].

#pragma once

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <string>
#include <vector>

#include "feat/attention.hpp"
#include "feat/error.hpp"
#include "feat/generator.hpp"

namespace feat::io {

/// 8-bit raster, row-major, interleaved channels (1 = gray, 3 = RGB).
struct Raster {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 3;
  std::vector<std::uint8_t> pixels;
};

inline std::uint8_t to_byte(double v) {
  if (std::isnan(v)) return 0;
  return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
}

inline std::uint8_t image_byte(double v) { return to_byte(255.0 * (v + 1.0) / 2.0); }
inline std::uint8_t mask_byte(double m) { return to_byte(255.0 * m); }

inline Raster image_raster(const ImageTensor& img) {
  const Tensor& t = img.pixels;
  if (t.rank() != 3 || t.dim(0) != 3) throw ShapeError("image_raster: expected (3, H, W)");
  Raster r{t.dim(2), t.dim(1), 3, {}};
  r.pixels.resize(r.width * r.height * 3);
  for (std::size_t y = 0; y < r.height; ++y) {
    for (std::size_t x = 0; x < r.width; ++x) {
      for (std::size_t c = 0; c < 3; ++c) r.pixels[(y * r.width + x) * 3 + c] = image_byte(t.at(c, y, x));
    }
  }
  return r;
}

/// Gray raster of a mask; `hard` maps nonzero values to 255.
inline Raster mask_raster(const AttentionMask& m, bool hard) {
  Raster r{m.width(), m.height(), 1, {}};
  for (std::size_t y = 0; y < r.height; ++y) {
    for (std::size_t x = 0; x < r.width; ++x) {
      const double v = m.values.at(0, y, x);
      r.pixels.push_back(hard ? (v > 0.0 ? 255 : 0) : mask_byte(v));
    }
  }
  return r;
}

inline void write_png(const std::string& path, const Raster& r) {
  if (r.pixels.size() != r.width * r.height * r.channels || r.width == 0 || r.height == 0) {
    throw ArgumentError("write_png: raster size mismatch");
  }
  std::FILE* fp = std::fopen(path.c_str(), "wb");
  if (fp == nullptr) throw FormatError("cannot write '" + path + "'");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (png == nullptr || info == nullptr) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw FormatError("libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw FormatError("libpng failed writing '" + path + "'");
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(r.width), static_cast<png_uint_32>(r.height), 8,
               r.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t y = 0; y < r.height; ++y) {
    png_write_row(png, const_cast<png_bytep>(r.pixels.data() + y * r.width * r.channels));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

inline Raster read_png(const std::string& path) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) {
    throw FormatError("cannot read PNG '" + path + "': " + image.message);
  }
  const bool gray = (image.format & PNG_FORMAT_FLAG_COLOR) == 0;
  image.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  Raster r{image.width, image.height, gray ? 1u : 3u, {}};
  r.pixels.resize(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, r.pixels.data(), 0, nullptr)) {
    png_image_free(&image);
    throw FormatError("cannot decode PNG '" + path + "': " + image.message);
  }
  return r;
}

}  // namespace feat::io
