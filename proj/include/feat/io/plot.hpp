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

// Loss-curve rasteriser: one polyline per series on a white canvas with a
// frame, drawn into an io::Raster. No text rendering.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <vector>

#include "feat/io/png.hpp"

namespace feat::io {

struct Series {
  std::vector<double> x;
  std::vector<double> y;
  std::array<std::uint8_t, 3> color{0, 0, 0};
};

namespace detail {

inline void plot_pixel(Raster& r, long x, long y, const std::array<std::uint8_t, 3>& c) {
  if (x < 0 || y < 0 || x >= static_cast<long>(r.width) || y >= static_cast<long>(r.height)) return;
  const std::size_t i = (static_cast<std::size_t>(y) * r.width + static_cast<std::size_t>(x)) * 3;
  r.pixels[i] = c[0];
  r.pixels[i + 1] = c[1];
  r.pixels[i + 2] = c[2];
}

// Bresenham.
inline void plot_line(Raster& r, long x0, long y0, long x1, long y1, const std::array<std::uint8_t, 3>& c) {
  const long dx = std::labs(x1 - x0), sx = x0 < x1 ? 1 : -1;
  const long dy = -std::labs(y1 - y0), sy = y0 < y1 ? 1 : -1;
  long err = dx + dy;
  for (;;) {
    plot_pixel(r, x0, y0, c);
    if (x0 == x1 && y0 == y1) return;
    const long e2 = 2 * err;
    if (e2 >= dy) {
      err += dy;
      x0 += sx;
    }
    if (e2 <= dx) {
      err += dx;
      y0 += sy;
    }
  }
}

}  // namespace detail

/// Renders `series` into a width x height RGB raster sharing one pair of
/// axes (y range spans all finite values).
inline Raster plot_series(const std::vector<Series>& series, std::size_t width = 640,
                          std::size_t height = 360) {
  Raster r{width, height, 3, std::vector<std::uint8_t>(width * height * 3, 255)};
  const long margin = 20;
  const long x_lo = margin, x_hi = static_cast<long>(width) - margin;
  const long y_lo = margin, y_hi = static_cast<long>(height) - margin;
  const std::array<std::uint8_t, 3> frame{160, 160, 160};
  detail::plot_line(r, x_lo, y_lo, x_hi, y_lo, frame);
  detail::plot_line(r, x_lo, y_hi, x_hi, y_hi, frame);
  detail::plot_line(r, x_lo, y_lo, x_lo, y_hi, frame);
  detail::plot_line(r, x_hi, y_lo, x_hi, y_hi, frame);

  double xmin = INFINITY, xmax = -INFINITY, ymin = INFINITY, ymax = -INFINITY;
  for (const Series& s : series) {
    for (std::size_t k = 0; k < std::min(s.x.size(), s.y.size()); ++k) {
      if (!std::isfinite(s.x[k]) || !std::isfinite(s.y[k])) continue;
      xmin = std::min(xmin, s.x[k]);
      xmax = std::max(xmax, s.x[k]);
      ymin = std::min(ymin, s.y[k]);
      ymax = std::max(ymax, s.y[k]);
    }
  }
  if (!(xmin <= xmax)) return r;
  if (xmax == xmin) xmax = xmin + 1.0;
  if (ymax == ymin) ymax = ymin + 1.0;
  auto px = [&](double x) { return x_lo + std::lround((x - xmin) / (xmax - xmin) * double(x_hi - x_lo)); };
  auto py = [&](double y) { return y_hi - std::lround((y - ymin) / (ymax - ymin) * double(y_hi - y_lo)); };
  for (const Series& s : series) {
    bool have_prev = false;
    long prev_x = 0, prev_y = 0;
    for (std::size_t k = 0; k < std::min(s.x.size(), s.y.size()); ++k) {
      if (!std::isfinite(s.x[k]) || !std::isfinite(s.y[k])) {
        have_prev = false;
        continue;
      }
      const long cx = px(s.x[k]), cy = py(s.y[k]);
      if (have_prev) {
        detail::plot_line(r, prev_x, prev_y, cx, cy, s.color);
      } else {
        detail::plot_pixel(r, cx, cy, s.color);
      }
      prev_x = cx;
      prev_y = cy;
      have_prev = true;
    }
  }
  return r;
}

}  // namespace feat::io
