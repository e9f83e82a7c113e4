#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "stenoseg/annotations.hpp"
#include "stenoseg/errors.hpp"
#include "stenoseg/geometry.hpp"

namespace stenoseg::augmentation {

// Augmentation hyperparameters. Defaults follow the training recipe:
// flips at 0.5, translate ±0.3 of each side, rotation ±30°, scale gain
// [0.5, 1.5], shear ±5°, perspective coefficients ±0.001, HSV jitter
// half-ranges 0.015 / 0.7 / 0.4.
struct AugmentationParams {
  double p_vflip = 0.5;
  double p_hflip = 0.5;
  double translate = 0.3;     // fraction of each side
  double rotation = 30.0;     // degrees half-range
  double scale = 0.5;         // multiplicative gain half-range about 1
  double shear = 5.0;         // degrees half-range, drawn per axis
  double perspective = 0.001; // projective coefficient half-range
  double hue = 0.015;         // fraction of the hue circle
  double saturation = 0.7;    // gain half-range about 1
  double value = 0.4;         // gain half-range about 1
  double min_instance_area = 4.0;  // square pixels; smaller instances are dropped
};

// One concrete augmentation draw. The scalar fields record what was sampled;
// h is the single composed planar transform that applies all of them.
struct TransformSpec {
  bool vflip = false;
  bool hflip = false;
  double translate_x = 0.0;  // pixels
  double translate_y = 0.0;
  double rotation_deg = 0.0;
  double scale = 1.0;
  double shear_x_deg = 0.0;
  double shear_y_deg = 0.0;
  double perspective_x = 0.0;
  double perspective_y = 0.0;
  double hue_shift = 0.0;
  double sat_gain = 1.0;
  double val_gain = 1.0;
  std::uint64_t seed = 0;
  geometry::Homography h;
  friend bool operator==(const TransformSpec&, const TransformSpec&) = default;
};

struct RasterImage {
  int width = 0;
  int height = 0;
  int channels = 1;  // 1 (grayscale) or 3 (RGB)
  std::vector<std::uint8_t> samples;  // row-major, interleaved

  RasterImage() = default;
  RasterImage(int w, int h, int c)
      : width(w), height(h), channels(c),
        samples(static_cast<std::size_t>(w) * h * c, 0) {}

  std::uint8_t& at(int x, int y, int c) {
    return samples[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  std::uint8_t at(int x, int y, int c) const {
    return samples[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  friend bool operator==(const RasterImage&, const RasterImage&) = default;
};

// Deterministic draw of one TransformSpec. Flips are Bernoulli(p); every
// continuous parameter is uniform over its symmetric range. Draw order is
// fixed: vflip, hflip, translate x/y, rotation, scale, shear x/y,
// perspective x/y, hue, saturation, value.
TransformSpec sample_transform(const AugmentationParams& params, std::uint64_t rng_seed,
                               int width, int height);

// Composition order: center-to-origin, perspective, rotation·scale, shear,
// flips, then translate combined with origin-to-center.
geometry::Homography build_homography(const TransformSpec& spec, int width, int height);

// Replicates the single gray channel into three.
RasterImage gray_to_rgb(const RasterImage& image);

// Cyclic hue shift plus clamped saturation/value gains. Neutral parameters
// (0, 1, 1) are identity up to one quantization level per channel.
RasterImage hsv_jitter(const RasterImage& image, double hue_shift, double sat_gain,
                       double val_gain);

// Bilinear warp of the image by h onto an out_width x out_height canvas;
// samples falling outside the source are black.
RasterImage warp_image(const RasterImage& src, const geometry::Homography& h,
                       int out_width, int out_height);

// Bilinear resize (labels are the caller's responsibility).
RasterImage resize_image(const RasterImage& src, int out_width, int out_height);

// Applies one TransformSpec to a 3-channel image and its instance polygons:
// warp + HSV jitter on the image; map, clip, and area-filter the polygons.
std::pair<RasterImage, std::vector<annotations::InstanceAnnotation>> augment_sample(
    const RasterImage& image, const std::vector<annotations::InstanceAnnotation>& anns,
    const TransformSpec& spec, double min_instance_area = 4.0);

}  // namespace stenoseg::augmentation
