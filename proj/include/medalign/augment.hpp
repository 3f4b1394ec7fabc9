#pragma once

#include <cmath>
#include <numbers>

#include "medalign/config.hpp"
#include "medalign/image.hpp"
#include "medalign/rng.hpp"

namespace medalign {

namespace detail {

inline double draw(Rng& rng, double lo, double hi) { return lo == hi ? lo : uniform(rng, lo, hi); }

inline Image hflip(const Image& src) {
  Image out(src.height, src.width, src.channels);
  for (int y = 0; y < src.height; ++y)
    for (int x = 0; x < src.width; ++x)
      for (int c = 0; c < src.channels; ++c) out.at(y, x, c) = src.at(y, src.width - 1 - x, c);
  return out;
}

// Rotation by `degrees` and scaling about the center, then translation by
// (ty, tx) pixels. Inverse-mapped with bilinear sampling; outside is zero.
inline Image affine(const Image& src, double degrees, double ty, double tx, double scale) {
  Image out(src.height, src.width, src.channels);
  const double th = degrees * std::numbers::pi / 180.0;
  const double ct = std::cos(th), st = std::sin(th);
  const double cy = (src.height - 1) / 2.0, cx = (src.width - 1) / 2.0;
  for (int y = 0; y < src.height; ++y)
    for (int x = 0; x < src.width; ++x) {
      const double dy = y - cy - ty, dx = x - cx - tx;
      const double sy = (ct * dy - st * dx) / scale + cy;
      const double sx = (st * dy + ct * dx) / scale + cx;
      if (sy < -0.5 || sx < -0.5 || sy > src.height - 0.5 || sx > src.width - 0.5) continue;
      for (int c = 0; c < src.channels; ++c) out.at(y, x, c) = src.sample(sy, sx, c);
    }
  return out;
}

}  // namespace detail

/// Training-time transform: resize, crop, flip, brightness/contrast jitter,
/// random affine, clamp to [0,1]. Output is crop_to x crop_to.
inline Image augment(const Image& img, const AugmentationSpec& spec, Rng& rng) {
  Image out = resize_bilinear(img, spec.resize_to, spec.resize_to);
  if (!spec.enabled) return center_crop(out, spec.crop_to);

  if (spec.random_crop) {
    std::uniform_int_distribution<int> pos(0, spec.resize_to - spec.crop_to);
    const int top = pos(rng);
    const int left = pos(rng);
    out = crop(out, top, left, spec.crop_to, spec.crop_to);
  } else {
    out = center_crop(out, spec.crop_to);
  }

  if (uniform(rng, 0.0, 1.0) < spec.hflip_prob) out = detail::hflip(out);

  const double brightness = detail::draw(rng, spec.brightness_min, spec.brightness_max);
  const double contrast = detail::draw(rng, spec.contrast_min, spec.contrast_max);
  if (brightness != 1.0 || contrast != 1.0) {
    double mean = 0;
    for (float& p : out.pixels) mean += (p = static_cast<float>(p * brightness));
    mean /= static_cast<double>(out.pixels.size());
    for (float& p : out.pixels) p = static_cast<float>((p - mean) * contrast + mean);
  }

  const double degrees = detail::draw(rng, spec.degrees_min, spec.degrees_max);
  const double shift = spec.max_translate * spec.crop_to;
  const double ty = detail::draw(rng, -shift, shift);
  const double tx = detail::draw(rng, -shift, shift);
  const double scale = detail::draw(rng, spec.scale_min, spec.scale_max);
  if (degrees != 0.0 || ty != 0.0 || tx != 0.0 || scale != 1.0) out = detail::affine(out, degrees, ty, tx, scale);

  for (float& p : out.pixels) p = std::clamp(p, 0.0f, 1.0f);
  return out;
}

}  // namespace medalign
