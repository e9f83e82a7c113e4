#include "stenoseg/augmentation.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

namespace stenoseg::augmentation {

namespace {

// 53-bit mantissa draw in [0, 1); bit-stable across platforms since mt19937_64
// itself is fully specified.
double uniform01(std::mt19937_64& rng) { return (rng() >> 11) * 0x1.0p-53; }

double uniform_sym(std::mt19937_64& rng, double half_range) {
  return (2.0 * uniform01(rng) - 1.0) * half_range;
}

void check_params(const AugmentationParams& p) {
  if (p.p_vflip < 0 || p.p_vflip > 1 || p.p_hflip < 0 || p.p_hflip > 1)
    throw ConfigError("flip probabilities must lie in [0,1]");
  for (double half : {p.translate, p.rotation, p.scale, p.shear, p.perspective, p.hue,
                      p.saturation, p.value})
    if (half < 0) throw ConfigError("augmentation half-ranges must be >= 0");
  if (p.min_instance_area < 0) throw ConfigError("min_instance_area must be >= 0");
}

}  // namespace

TransformSpec sample_transform(const AugmentationParams& params, std::uint64_t rng_seed,
                               int width, int height) {
  check_params(params);
  std::mt19937_64 rng(rng_seed);
  TransformSpec s;
  s.seed = rng_seed;
  s.vflip = uniform01(rng) < params.p_vflip;
  s.hflip = uniform01(rng) < params.p_hflip;
  s.translate_x = uniform_sym(rng, params.translate) * width;
  s.translate_y = uniform_sym(rng, params.translate) * height;
  s.rotation_deg = uniform_sym(rng, params.rotation);
  s.scale = 1.0 + uniform_sym(rng, params.scale);
  s.shear_x_deg = uniform_sym(rng, params.shear);
  s.shear_y_deg = uniform_sym(rng, params.shear);
  s.perspective_x = uniform_sym(rng, params.perspective);
  s.perspective_y = uniform_sym(rng, params.perspective);
  s.hue_shift = uniform_sym(rng, params.hue);
  s.sat_gain = 1.0 + uniform_sym(rng, params.saturation);
  s.val_gain = 1.0 + uniform_sym(rng, params.value);
  s.h = build_homography(s, width, height);
  return s;
}

geometry::Homography build_homography(const TransformSpec& spec, int width, int height) {
  using geometry::Homography;
  const double cx = width / 2.0;
  const double cy = height / 2.0;
  Homography h = Homography::translation(-cx, -cy);
  h = compose(h, Homography::perspective(spec.perspective_x, spec.perspective_y));
  Homography rs = Homography::rotation_deg(spec.rotation_deg);
  for (int i : {0, 1, 3, 4}) rs.m[i] *= spec.scale;
  h = compose(h, rs);
  h = compose(h, Homography::shear_deg(spec.shear_x_deg, spec.shear_y_deg));
  h = compose(h, Homography::scaling(spec.hflip ? -1.0 : 1.0, spec.vflip ? -1.0 : 1.0));
  h = compose(h, Homography::translation(cx + spec.translate_x, cy + spec.translate_y));
  return h;
}

RasterImage gray_to_rgb(const RasterImage& image) {
  if (image.channels != 1)
    throw Error("gray_to_rgb: expected a single-channel image, got " +
                std::to_string(image.channels) + " channels");
  RasterImage out(image.width, image.height, 3);
  for (std::size_t i = 0; i < image.samples.size(); ++i) {
    out.samples[3 * i] = image.samples[i];
    out.samples[3 * i + 1] = image.samples[i];
    out.samples[3 * i + 2] = image.samples[i];
  }
  return out;
}

namespace {

void rgb_to_hsv(double r, double g, double b, double& h, double& s, double& v) {
  const double mx = std::max({r, g, b});
  const double mn = std::min({r, g, b});
  const double d = mx - mn;
  v = mx;
  s = mx > 0.0 ? d / mx : 0.0;
  if (d == 0.0) {
    h = 0.0;
    return;
  }
  if (mx == r) h = (g - b) / d / 6.0;
  else if (mx == g) h = ((b - r) / d + 2.0) / 6.0;
  else h = ((r - g) / d + 4.0) / 6.0;
  h -= std::floor(h);
}

void hsv_to_rgb(double h, double s, double v, double& r, double& g, double& b) {
  const double x = h * 6.0;
  const double fl = std::floor(x);
  const double f = x - fl;
  const int sector = static_cast<int>(fl) % 6;  // h*6 can round up to 6.0; 6%6 wraps to red
  const double p = v * (1.0 - s);
  const double q = v * (1.0 - f * s);
  const double t = v * (1.0 - (1.0 - f) * s);
  switch (sector) {
    case 0: r = v; g = t; b = p; break;
    case 1: r = q; g = v; b = p; break;
    case 2: r = p; g = v; b = t; break;
    case 3: r = p; g = q; b = v; break;
    case 4: r = t; g = p; b = v; break;
    default: r = v; g = p; b = q; break;
  }
}

std::uint8_t to_byte(double unit) {
  return static_cast<std::uint8_t>(std::clamp<long>(std::lround(unit * 255.0), 0, 255));
}

}  // namespace

RasterImage hsv_jitter(const RasterImage& image, double hue_shift, double sat_gain,
                       double val_gain) {
  if (image.channels != 3)
    throw Error("hsv_jitter: expected a 3-channel image, got " +
                std::to_string(image.channels) + " channels");
  RasterImage out(image.width, image.height, 3);
  for (std::size_t i = 0; i < image.samples.size(); i += 3) {
    double h, s, v, r, g, b;
    rgb_to_hsv(image.samples[i] / 255.0, image.samples[i + 1] / 255.0,
               image.samples[i + 2] / 255.0, h, s, v);
    h += hue_shift;
    h -= std::floor(h);
    s = std::clamp(s * sat_gain, 0.0, 1.0);
    v = std::clamp(v * val_gain, 0.0, 1.0);
    hsv_to_rgb(h, s, v, r, g, b);
    out.samples[i] = to_byte(r);
    out.samples[i + 1] = to_byte(g);
    out.samples[i + 2] = to_byte(b);
  }
  return out;
}

RasterImage warp_image(const RasterImage& src, const geometry::Homography& h,
                       int out_width, int out_height) {
  if (src.channels != 1 && src.channels != 3)
    throw Error("warp_image: image must have 1 or 3 channels");
  if (out_width <= 0 || out_height <= 0)
    throw Error("warp_image: output canvas must have positive size");
  const geometry::Homography inv = h.inverse();
  RasterImage dst(out_width, out_height, src.channels);
  for (int y = 0; y < out_height; ++y) {
    for (int x = 0; x < out_width; ++x) {
      const geometry::Point p = inv.apply({x + 0.5, y + 0.5});
      const double u = p.x - 0.5;
      const double v = p.y - 0.5;
      if (!(u > -1.0) || !(v > -1.0) || !(u < src.width) || !(v < src.height))
        continue;  // entirely black
      const double fu = std::floor(u);
      const double fv = std::floor(v);
      const int i0 = static_cast<int>(fu);
      const int j0 = static_cast<int>(fv);
      const double fx = u - fu;
      const double fy = v - fv;
      const auto tap = [&](int i, int j, int c) -> double {
        if (i < 0 || i >= src.width || j < 0 || j >= src.height) return 0.0;
        return src.at(i, j, c);
      };
      for (int c = 0; c < src.channels; ++c) {
        const double acc = (1.0 - fx) * (1.0 - fy) * tap(i0, j0, c) +
                           fx * (1.0 - fy) * tap(i0 + 1, j0, c) +
                           (1.0 - fx) * fy * tap(i0, j0 + 1, c) +
                           fx * fy * tap(i0 + 1, j0 + 1, c);
        dst.at(x, y, c) =
            static_cast<std::uint8_t>(std::clamp<long>(std::lround(acc), 0, 255));
      }
    }
  }
  return dst;
}

RasterImage resize_image(const RasterImage& src, int out_width, int out_height) {
  const auto h = geometry::Homography::scaling(static_cast<double>(out_width) / src.width,
                                               static_cast<double>(out_height) / src.height);
  return warp_image(src, h, out_width, out_height);
}

std::pair<RasterImage, std::vector<annotations::InstanceAnnotation>> augment_sample(
    const RasterImage& image, const std::vector<annotations::InstanceAnnotation>& anns,
    const TransformSpec& spec, double min_instance_area) {
  if (image.channels != 3)
    throw Error("augment_sample: image must be 3-channel; call gray_to_rgb first");
  RasterImage out = warp_image(image, spec.h, image.width, image.height);
  const bool neutral_hsv =
      spec.hue_shift == 0.0 && spec.sat_gain == 1.0 && spec.val_gain == 1.0;
  if (!neutral_hsv) out = hsv_jitter(out, spec.hue_shift, spec.sat_gain, spec.val_gain);

  std::vector<annotations::InstanceAnnotation> kept;
  for (const auto& ann : anns) {
    annotations::InstanceAnnotation copy = ann;
    copy.polygons.clear();
    double total_area = 0.0;
    for (const auto& poly : ann.polygons) {
      auto pieces = geometry::clip_polygon(geometry::apply_homography(poly, spec.h),
                                           image.width, image.height);
      for (auto& piece : pieces) {
        total_area += geometry::polygon_area(piece);
        copy.polygons.push_back(std::move(piece));
      }
    }
    if (!copy.polygons.empty() && total_area >= min_instance_area)
      kept.push_back(std::move(copy));
  }
  return {std::move(out), std::move(kept)};
}

}  // namespace stenoseg::augmentation
