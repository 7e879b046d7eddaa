#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>

namespace cmo {

/// Axis-aligned box on the unit canvas. y grows downward, so "above" means a
/// smaller y.
struct BBox {
  double x_min = 0.0;
  double y_min = 0.0;
  double x_max = 0.0;
  double y_max = 0.0;

  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }
  double area() const { return width() * height(); }
  double cx() const { return 0.5 * (x_min + x_max); }
  double cy() const { return 0.5 * (y_min + y_max); }

  bool valid() const {
    auto in01 = [](double v) { return std::isfinite(v) && v >= 0.0 && v <= 1.0; };
    return in01(x_min) && in01(y_min) && in01(x_max) && in01(y_max) &&
           x_min <= x_max && y_min <= y_max;
  }

  friend bool operator==(const BBox&, const BBox&) = default;
};

inline void require_valid(const BBox& b) {
  if (!b.valid()) throw std::invalid_argument("bbox: coordinates outside [0,1] or inverted");
}

struct PairGeometry {
  double area_i = 0.0;
  double area_j = 0.0;
  double intersection = 0.0;
  bool overlap_x = false;  // x-intervals intersect, touching included
  bool overlap_y = false;
  std::array<double, 2> center_i{};
  std::array<double, 2> center_j{};
  double width_i = 0.0, height_i = 0.0;
  double width_j = 0.0, height_j = 0.0;
};

inline PairGeometry bbox_geometry(const BBox& bi, const BBox& bj) {
  PairGeometry g;
  g.area_i = bi.area();
  g.area_j = bj.area();
  const double ix = std::min(bi.x_max, bj.x_max) - std::max(bi.x_min, bj.x_min);
  const double iy = std::min(bi.y_max, bj.y_max) - std::max(bi.y_min, bj.y_min);
  g.overlap_x = ix >= 0.0;
  g.overlap_y = iy >= 0.0;
  g.intersection = std::max(0.0, ix) * std::max(0.0, iy);
  g.center_i = {bi.cx(), bi.cy()};
  g.center_j = {bj.cx(), bj.cy()};
  g.width_i = bi.width();
  g.height_i = bi.height();
  g.width_j = bj.width();
  g.height_j = bj.height();
  return g;
}

}  // namespace cmo
