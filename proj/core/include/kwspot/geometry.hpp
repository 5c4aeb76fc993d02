#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

namespace kwspot {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  Vec2 operator+(Vec2 o) const { return {x + o.x, y + o.y}; }
  Vec2 operator-(Vec2 o) const { return {x - o.x, y - o.y}; }
  Vec2 operator*(double s) const { return {x * s, y * s}; }
  double dot(Vec2 o) const { return x * o.x + y * o.y; }
  double cross(Vec2 o) const { return x * o.y - y * o.x; }
  double norm() const;
};

// Four-vertex polygon in image pixel coordinates. Canonical winding is
// positive shoelace area (x right, y down).
struct QuadPolygon {
  std::array<Vec2, 4> v{};

  double signed_area() const;
  double area() const;
  // Area centroid (not the vertex mean).
  Vec2 centroid() const;
  // Returns a copy with canonical winding.
  QuadPolygon normalized() const;
  bool self_intersects() const;
  // Throws DegenerateGeometry on near-zero area or self-intersection.
  void validate() const;
  void aabb(Vec2& lo, Vec2& hi) const;
  QuadPolygon translated(Vec2 d) const;
};

// Oriented rectangle: center (cx, cy), side w along direction theta, side h
// across it. Canonical form keeps w >= h and theta in [-pi/4, 3pi/4);
// squares fold theta into [-pi/4, pi/4).
struct RotatedRect {
  double cx = 0.0;
  double cy = 0.0;
  double w = 0.0;
  double h = 0.0;
  double theta = 0.0;

  double area() const { return w * h; }
  QuadPolygon to_quad() const;
  RotatedRect canonical() const;
  // Scales both sides by factor s about the center.
  RotatedRect scaled(double s) const;
  // Fits a RotatedRect to a quad that is an exact rectangle (within eps).
  // For general point clouds use min_area_rect_of_points.
  static RotatedRect from_quad(const QuadPolygon& q);
};

// Axis-aligned affine map from image coordinates to grid coordinates:
// g = (p - origin) * scale, per axis.
struct GridTransform {
  Vec2 origin{};
  double scale_x = 1.0;
  double scale_y = 1.0;

  Vec2 to_grid(Vec2 p) const {
    return {(p.x - origin.x) * scale_x, (p.y - origin.y) * scale_y};
  }
  Vec2 to_image(Vec2 g) const {
    return {g.x / scale_x + origin.x, g.y / scale_y + origin.y};
  }
};

// H x W boolean raster. `origin` records where the raster sits in the image.
struct BinaryMask {
  int h = 0;
  int w = 0;
  std::vector<uint8_t> grid;  // row-major, 0/1
  Vec2 origin{};

  uint8_t at(int row, int col) const { return grid[size_t(row) * w + col]; }
  void set(int row, int col, bool value) { grid[size_t(row) * w + col] = value ? 1 : 0; }
  int count() const;
};

// Half-open point-in-polygon test (even-odd ray cast): points on a lower/left
// edge are inside, on an upper/right edge outside. The same rule drives
// rasterize(), so abutting polygons tile without double coverage.
bool point_in_polygon(Vec2 p, std::span<const Vec2> poly);
inline bool point_in_polygon(Vec2 p, const QuadPolygon& q) {
  return point_in_polygon(p, std::span<const Vec2>(q.v.data(), 4));
}

// Minimum distance from p to the polygon boundary.
double point_to_polygon_distance(Vec2 p, std::span<const Vec2> poly);

// Moves every vertex toward the area centroid by `scale` (affine scaling
// about the centroid). Centroid is preserved; area scales by scale^2.
QuadPolygon shrink_polygon(const QuadPolygon& poly, double scale);

// Rasterizes the polygon onto an h x w grid: a cell is set iff its center
// (col + 0.5, row + 0.5) in grid coordinates lies inside the transformed
// polygon under the half-open rule. Scanline implementation.
BinaryMask rasterize(const QuadPolygon& poly, int h, int w, const GridTransform& tf);

// Convex hull (Andrew monotone chain), counterclockwise in shoelace sense.
std::vector<Vec2> convex_hull(std::vector<Vec2> pts);

// Minimum-area enclosing rotated rectangle of a point set (edge-direction
// sweep over the convex hull). Degenerate inputs yield zero-sized rects.
RotatedRect min_area_rect_of_points(std::span<const Vec2> pts);

// Same, over the centers of all true cells of the mask, in grid coordinates.
// Throws EmptyMask if no cell is set.
RotatedRect min_area_rotated_rect(const BinaryMask& mask);

// Intersection-over-union of two rotated rectangles via convex clipping.
// Zero-area operands give 0 by convention.
double rotated_iou(const RotatedRect& a, const RotatedRect& b);

// Area of the intersection of two convex quads (Sutherland-Hodgman).
double convex_quad_intersection_area(const QuadPolygon& a, const QuadPolygon& b);

// Axis-aligned IoU of (x1, y1, x2, y2) boxes.
double aabb_iou(const std::array<double, 4>& a, const std::array<double, 4>& b);

}  // namespace kwspot
