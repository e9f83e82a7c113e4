#include "stenoseg/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <string>

namespace stenoseg::geometry {

namespace {

constexpr double kDetEpsilon = 1e-12;
constexpr double kDivideEpsilon = 1e-9;

}  // namespace

double polygon_area(const Polygon& poly) {
  if (poly.size() < 3)
    throw GeometryError("polygon_area: polygon has " + std::to_string(poly.size()) +
                        " vertices, need at least 3");
  double twice = 0.0;
  for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++)
    twice += poly[j].x * poly[i].y - poly[i].x * poly[j].y;
  return std::abs(twice) / 2.0;
}

Homography Homography::identity() { return {}; }

Homography Homography::translation(double tx, double ty) {
  Homography h;
  h.m = {1, 0, tx, 0, 1, ty, 0, 0, 1};
  return h;
}

Homography Homography::rotation_deg(double degrees) {
  const double rad = degrees * std::numbers::pi / 180.0;
  const double c = std::cos(rad);
  const double s = std::sin(rad);
  Homography h;
  h.m = {c, -s, 0, s, c, 0, 0, 0, 1};
  return h;
}

Homography Homography::scaling(double sx, double sy) {
  Homography h;
  h.m = {sx, 0, 0, 0, sy, 0, 0, 0, 1};
  return h;
}

Homography Homography::shear_deg(double x_deg, double y_deg) {
  const double tx = std::tan(x_deg * std::numbers::pi / 180.0);
  const double ty = std::tan(y_deg * std::numbers::pi / 180.0);
  Homography h;
  h.m = {1, tx, 0, ty, 1, 0, 0, 0, 1};
  return h;
}

Homography Homography::perspective(double px, double py) {
  Homography h;
  h.m = {1, 0, 0, 0, 1, 0, px, py, 1};
  return h;
}

double Homography::det() const {
  return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
         m[2] * (m[3] * m[7] - m[4] * m[6]);
}

bool Homography::invertible() const { return std::abs(det()) > kDetEpsilon; }

Homography Homography::normalized() const {
  if (std::abs(m[8]) <= kDetEpsilon) return *this;
  Homography h;
  for (int i = 0; i < 9; ++i) h.m[i] = m[i] / m[8];
  return h;
}

Homography Homography::inverse() const {
  const double d = det();
  if (std::abs(d) <= kDetEpsilon)
    throw GeometryError("homography is not invertible (|det| <= 1e-12)");
  Homography r;
  r.m[0] = (m[4] * m[8] - m[5] * m[7]) / d;
  r.m[1] = (m[2] * m[7] - m[1] * m[8]) / d;
  r.m[2] = (m[1] * m[5] - m[2] * m[4]) / d;
  r.m[3] = (m[5] * m[6] - m[3] * m[8]) / d;
  r.m[4] = (m[0] * m[8] - m[2] * m[6]) / d;
  r.m[5] = (m[2] * m[3] - m[0] * m[5]) / d;
  r.m[6] = (m[3] * m[7] - m[4] * m[6]) / d;
  r.m[7] = (m[1] * m[6] - m[0] * m[7]) / d;
  r.m[8] = (m[0] * m[4] - m[1] * m[3]) / d;
  return r.normalized();
}

Point Homography::apply(const Point& p) const {
  const double w = m[6] * p.x + m[7] * p.y + m[8];
  if (std::abs(w) <= kDivideEpsilon)
    throw GeometryError("homography maps point to the plane at infinity (denominator underflow)");
  return {(m[0] * p.x + m[1] * p.y + m[2]) / w, (m[3] * p.x + m[4] * p.y + m[5]) / w};
}

Homography compose(const Homography& first, const Homography& then) {
  Homography r;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double acc = 0.0;
      for (int k = 0; k < 3; ++k) acc += then.m[i * 3 + k] * first.m[k * 3 + j];
      r.m[i * 3 + j] = acc;
    }
  r = r.normalized();
  if (!r.invertible()) throw GeometryError("composed homography is not invertible");
  return r;
}

Polygon apply_homography(const Polygon& poly, const Homography& h) {
  Polygon out;
  out.reserve(poly.size());
  for (const Point& p : poly) out.push_back(h.apply(p));
  return out;
}

namespace {

enum class Side { left, right, bottom, top };

bool inside_side(const Point& p, Side s, double w, double h) {
  switch (s) {
    case Side::left: return p.x >= 0.0;
    case Side::right: return p.x <= w;
    case Side::bottom: return p.y >= 0.0;
    case Side::top: return p.y <= h;
  }
  return false;
}

// The boundary coordinate is assigned exactly so clipped vertices cannot
// drift outside the canvas.
Point intersect_side(const Point& a, const Point& b, Side s, double w, double h) {
  switch (s) {
    case Side::left: {
      const double t = std::clamp((0.0 - a.x) / (b.x - a.x), 0.0, 1.0);
      return {0.0, a.y + t * (b.y - a.y)};
    }
    case Side::right: {
      const double t = std::clamp((w - a.x) / (b.x - a.x), 0.0, 1.0);
      return {w, a.y + t * (b.y - a.y)};
    }
    case Side::bottom: {
      const double t = std::clamp((0.0 - a.y) / (b.y - a.y), 0.0, 1.0);
      return {a.x + t * (b.x - a.x), 0.0};
    }
    case Side::top: {
      const double t = std::clamp((h - a.y) / (b.y - a.y), 0.0, 1.0);
      return {a.x + t * (b.x - a.x), h};
    }
  }
  return {};
}

}  // namespace

std::vector<Polygon> clip_polygon(const Polygon& poly, double width, double height) {
  if (poly.size() < 3)
    throw GeometryError("clip_polygon: polygon has fewer than 3 vertices");
  Polygon out = poly;
  for (Side s : {Side::left, Side::right, Side::bottom, Side::top}) {
    Polygon in = std::move(out);
    out = Polygon{};
    if (in.empty()) break;
    for (std::size_t i = 0, j = in.size() - 1; i < in.size(); j = i++) {
      const Point& cur = in[i];
      const Point& prev = in[j];
      const bool cur_in = inside_side(cur, s, width, height);
      const bool prev_in = inside_side(prev, s, width, height);
      if (cur_in) {
        if (!prev_in) out.push_back(intersect_side(prev, cur, s, width, height));
        out.push_back(cur);
      } else if (prev_in) {
        out.push_back(intersect_side(prev, cur, s, width, height));
      }
    }
  }
  if (out.size() < 3) return {};
  return {std::move(out)};
}

long long Mask::popcount() const {
  return std::accumulate(bits.begin(), bits.end(), 0LL,
                         [](long long acc, std::uint8_t b) { return acc + (b != 0); });
}

Mask rasterize(const std::vector<Polygon>& polys, int width, int height) {
  if (width <= 0 || height <= 0)
    throw GeometryError("rasterize: canvas must have positive size, got " +
                        std::to_string(width) + "x" + std::to_string(height));
  Mask mask(width, height);
  std::vector<double> xs;
  for (const Polygon& poly : polys) {
    if (poly.size() < 3)
      throw GeometryError("rasterize: polygon has fewer than 3 vertices");
    const std::size_t n = poly.size();
    for (int row = 0; row < height; ++row) {
      const double y = row + 0.5;
      xs.clear();
      for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
        const Point& a = poly[i];
        const Point& b = poly[j];
        if ((a.y > y) != (b.y > y))
          xs.push_back((b.x - a.x) * (y - a.y) / (b.y - a.y) + a.x);
      }
      if (xs.empty()) continue;
      std::sort(xs.begin(), xs.end());
      // Pixel center is inside iff an odd number of crossings lie strictly to
      // its right; identical to the classic even-odd point-in-polygon test.
      std::size_t p = 0;
      for (int col = 0; col < width; ++col) {
        const double x = col + 0.5;
        while (p < xs.size() && !(x < xs[p])) ++p;
        if ((xs.size() - p) % 2 == 1) mask.set(col, row, true);
      }
    }
  }
  return mask;
}

OverlapCounts overlap_counts(const Mask& pred, const Mask& gt) {
  if (pred.width != gt.width || pred.height != gt.height)
    throw GeometryError("overlap_counts: mask dimensions differ (" + std::to_string(pred.width) +
                        "x" + std::to_string(pred.height) + " vs " + std::to_string(gt.width) +
                        "x" + std::to_string(gt.height) + ")");
  OverlapCounts c;
  for (std::size_t k = 0; k < pred.bits.size(); ++k) {
    const bool p = pred.bits[k] != 0;
    const bool g = gt.bits[k] != 0;
    c.tp += p && g;
    c.fp += p && !g;
    c.fn += !p && g;
  }
  return c;
}

}  // namespace stenoseg::geometry
