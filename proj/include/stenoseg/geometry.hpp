#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "stenoseg/errors.hpp"

namespace stenoseg::geometry {

struct Point {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Point&, const Point&) = default;
};

using Polygon = std::vector<Point>;

// Absolute shoelace area. Throws GeometryError for polygons with <3 vertices.
double polygon_area(const Polygon& poly);

// Planar projective transform, row-major 3x3, applied to column vectors.
// The bottom-right entry is kept at 1 whenever it is large enough to divide by.
struct Homography {
  std::array<double, 9> m{1, 0, 0, 0, 1, 0, 0, 0, 1};

  static Homography identity();
  static Homography translation(double tx, double ty);
  static Homography rotation_deg(double degrees);  // about the origin
  static Homography scaling(double sx, double sy);
  static Homography shear_deg(double x_deg, double y_deg);
  static Homography perspective(double px, double py);

  double det() const;
  bool invertible() const;  // |det| > 1e-12
  Homography normalized() const;
  Homography inverse() const;  // throws GeometryError when not invertible

  // Maps a point with perspective divide. Throws GeometryError when the
  // denominator magnitude is <= 1e-9.
  Point apply(const Point& p) const;

  friend bool operator==(const Homography&, const Homography&) = default;
};

// Transform that applies `first`, then `then`. Throws GeometryError when the
// product is not invertible.
Homography compose(const Homography& first, const Homography& then);

// Maps every vertex through h with perspective divide; vertex count preserved.
Polygon apply_homography(const Polygon& poly, const Homography& h);

// Sutherland-Hodgman clip against [0,width]x[0,height]. Empty result when the
// polygon lies fully outside; clipped output with <3 vertices counts as empty.
std::vector<Polygon> clip_polygon(const Polygon& poly, double width, double height);

struct Mask {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> bits;  // row-major, one byte per pixel, 0 or 1

  Mask() = default;
  Mask(int w, int h)
      : width(w), height(h), bits(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), 0) {}

  bool at(int x, int y) const {
    return bits[static_cast<std::size_t>(y) * width + x] != 0;
  }
  void set(int x, int y, bool v) {
    bits[static_cast<std::size_t>(y) * width + x] = v ? 1 : 0;
  }
  long long popcount() const;

  friend bool operator==(const Mask&, const Mask&) = default;
};

// Even-odd rasterization of the union of polygons, sampled at pixel centers
// (i+0.5, j+0.5). A pixel is set iff its center lies inside at least one
// polygon under the even-odd rule. Throws on zero-size canvas and on polygons
// with <3 vertices.
Mask rasterize(const std::vector<Polygon>& polys, int width, int height);

struct OverlapCounts {
  long long tp = 0;
  long long fp = 0;
  long long fn = 0;
};

// Pixelwise TP/FP/FN between a prediction mask and a ground-truth mask.
// Throws GeometryError on dimension mismatch.
OverlapCounts overlap_counts(const Mask& pred, const Mask& gt);

}  // namespace stenoseg::geometry
