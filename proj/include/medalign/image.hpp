#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "medalign/errors.hpp"

namespace medalign {

/// Interleaved H x W x C float image, values nominally in [0, 1].
struct Image {
  int height = 0;
  int width = 0;
  int channels = 1;
  std::vector<float> pixels;

  Image() = default;
  Image(int h, int w, int c, float fill = 0.0f)
      : height(h), width(w), channels(c), pixels(static_cast<std::size_t>(h) * w * c, fill) {
    if (h <= 0 || w <= 0 || c <= 0) throw ShapeError("image dimensions must be positive");
  }

  std::size_t size() const noexcept { return pixels.size(); }
  float& at(int y, int x, int c = 0) { return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
  float at(int y, int x, int c = 0) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }

  // Bilinear sample with edge clamping; coordinates in pixel-center units.
  float sample(double y, double x, int c) const {
    y = std::clamp(y, 0.0, static_cast<double>(height - 1));
    x = std::clamp(x, 0.0, static_cast<double>(width - 1));
    const int y0 = static_cast<int>(std::floor(y));
    const int x0 = static_cast<int>(std::floor(x));
    const int y1 = std::min(y0 + 1, height - 1);
    const int x1 = std::min(x0 + 1, width - 1);
    const double fy = y - y0, fx = x - x0;
    const double top = at(y0, x0, c) * (1 - fx) + at(y0, x1, c) * fx;
    const double bot = at(y1, x0, c) * (1 - fx) + at(y1, x1, c) * fx;
    return static_cast<float>(top * (1 - fy) + bot * fy);
  }

  friend bool operator==(const Image&, const Image&) = default;
};

inline Image resize_bilinear(const Image& src, int out_h, int out_w) {
  if (src.height == out_h && src.width == out_w) return src;
  Image out(out_h, out_w, src.channels);
  const double sy = static_cast<double>(src.height) / out_h;
  const double sx = static_cast<double>(src.width) / out_w;
  for (int y = 0; y < out_h; ++y)
    for (int x = 0; x < out_w; ++x)
      for (int c = 0; c < src.channels; ++c)
        out.at(y, x, c) = src.sample((y + 0.5) * sy - 0.5, (x + 0.5) * sx - 0.5, c);
  return out;
}

inline Image crop(const Image& src, int top, int left, int h, int w) {
  if (top < 0 || left < 0 || top + h > src.height || left + w > src.width)
    throw ShapeError("crop window exceeds image bounds");
  Image out(h, w, src.channels);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < src.channels; ++c) out.at(y, x, c) = src.at(top + y, left + x, c);
  return out;
}

inline Image center_crop(const Image& src, int size) {
  if (size > src.height || size > src.width) throw ShapeError("center crop larger than image");
  return crop(src, (src.height - size) / 2, (src.width - size) / 2, size, size);
}

/// Deterministic evaluation transform: resize to `resize_to` then center crop.
inline Image eval_transform(const Image& src, int resize_to, int crop_to) {
  return center_crop(resize_bilinear(src, resize_to, resize_to), crop_to);
}

}  // namespace medalign
