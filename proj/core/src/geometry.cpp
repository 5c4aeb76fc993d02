#include "kwspot/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "kwspot/errors.hpp"

namespace kwspot {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kDegenerateArea = 1e-9;

double cross3(Vec2 o, Vec2 a, Vec2 b) { return (a - o).cross(b - o); }

// Proper intersection of open segments (shared endpoints do not count).
bool segments_cross(Vec2 a, Vec2 b, Vec2 c, Vec2 d) {
  double d1 = cross3(c, d, a);
  double d2 = cross3(c, d, b);
  double d3 = cross3(a, b, c);
  double d4 = cross3(a, b, d);
  return ((d1 > 0 && d2 < 0) || (d1 < 0 && d2 > 0)) &&
         ((d3 > 0 && d4 < 0) || (d3 < 0 && d4 > 0));
}

// X coordinate where edge (a, b) crosses the horizontal line y = cy.
// Shared by point_in_polygon and the rasterizer so both apply bitwise
// identical boundary arithmetic.
inline double edge_cross_x(Vec2 a, Vec2 b, double cy) {
  return a.x + (cy - a.y) / (b.y - a.y) * (b.x - a.x);
}

double polygon_area(std::span<const Vec2> poly) {
  double s = 0.0;
  for (size_t i = 0, n = poly.size(); i < n; ++i) {
    Vec2 a = poly[i], b = poly[(i + 1) % n];
    s += a.cross(b);
  }
  return 0.5 * s;
}

double point_segment_distance(Vec2 p, Vec2 a, Vec2 b) {
  Vec2 ab = b - a;
  double len2 = ab.dot(ab);
  double t = len2 > 0 ? std::clamp((p - a).dot(ab) / len2, 0.0, 1.0) : 0.0;
  Vec2 q = a + ab * t;
  return (p - q).norm();
}

}  // namespace

double Vec2::norm() const { return std::hypot(x, y); }

double QuadPolygon::signed_area() const {
  return polygon_area(std::span<const Vec2>(v.data(), 4));
}

double QuadPolygon::area() const { return std::abs(signed_area()); }

Vec2 QuadPolygon::centroid() const {
  double a = 0.0, cx = 0.0, cy = 0.0;
  for (int i = 0; i < 4; ++i) {
    Vec2 p = v[i], q = v[(i + 1) % 4];
    double w = p.cross(q);
    a += w;
    cx += (p.x + q.x) * w;
    cy += (p.y + q.y) * w;
  }
  if (std::abs(a) < 2.0 * kDegenerateArea)
    throw DegenerateGeometry("centroid of near-zero-area polygon");
  return {cx / (3.0 * a), cy / (3.0 * a)};
}

QuadPolygon QuadPolygon::normalized() const {
  if (signed_area() >= 0.0) return *this;
  return QuadPolygon{{v[0], v[3], v[2], v[1]}};
}

bool QuadPolygon::self_intersects() const {
  return segments_cross(v[0], v[1], v[2], v[3]) ||
         segments_cross(v[1], v[2], v[3], v[0]);
}

void QuadPolygon::validate() const {
  if (area() < kDegenerateArea)
    throw DegenerateGeometry("quad area below 1e-9 px^2");
  if (self_intersects())
    throw DegenerateGeometry("self-intersecting quad");
}

void QuadPolygon::aabb(Vec2& lo, Vec2& hi) const {
  lo = hi = v[0];
  for (int i = 1; i < 4; ++i) {
    lo.x = std::min(lo.x, v[i].x);
    lo.y = std::min(lo.y, v[i].y);
    hi.x = std::max(hi.x, v[i].x);
    hi.y = std::max(hi.y, v[i].y);
  }
}

QuadPolygon QuadPolygon::translated(Vec2 d) const {
  QuadPolygon q = *this;
  for (auto& p : q.v) p = p + d;
  return q;
}

int BinaryMask::count() const {
  int n = 0;
  for (uint8_t c : grid) n += c;
  return n;
}

bool point_in_polygon(Vec2 p, std::span<const Vec2> poly) {
  bool inside = false;
  for (size_t i = 0, n = poly.size(); i < n; ++i) {
    Vec2 a = poly[i], b = poly[(i + 1) % n];
    if ((a.y > p.y) != (b.y > p.y)) {
      if (p.x < edge_cross_x(a, b, p.y)) inside = !inside;
    }
  }
  return inside;
}

double point_to_polygon_distance(Vec2 p, std::span<const Vec2> poly) {
  double d = std::numeric_limits<double>::infinity();
  for (size_t i = 0, n = poly.size(); i < n; ++i)
    d = std::min(d, point_segment_distance(p, poly[i], poly[(i + 1) % n]));
  return d;
}

QuadPolygon shrink_polygon(const QuadPolygon& poly, double scale) {
  if (!(scale > 0.0 && scale <= 1.0))
    throw InvariantError("shrink scale must be in (0, 1]");
  if (poly.area() < kDegenerateArea)
    throw DegenerateGeometry("cannot shrink near-zero-area polygon");
  Vec2 c = poly.centroid();
  QuadPolygon out;
  for (int i = 0; i < 4; ++i) out.v[i] = c + (poly.v[i] - c) * scale;
  return out;
}

BinaryMask rasterize(const QuadPolygon& poly, int h, int w, const GridTransform& tf) {
  if (h < 1 || w < 1) throw InvalidGrid("rasterize grid must be at least 1x1");
  BinaryMask mask;
  mask.h = h;
  mask.w = w;
  mask.grid.assign(size_t(h) * w, 0);
  mask.origin = tf.origin;

  std::array<Vec2, 4> g;
  for (int i = 0; i < 4; ++i) g[i] = tf.to_grid(poly.v[i]);

  double xs[4];
  for (int row = 0; row < h; ++row) {
    double cy = row + 0.5;
    int m = 0;
    for (int i = 0; i < 4; ++i) {
      Vec2 a = g[i], b = g[(i + 1) % 4];
      if ((a.y > cy) != (b.y > cy)) xs[m++] = edge_cross_x(a, b, cy);
    }
    std::sort(xs, xs + m);
    // Crossing parity fills half-open spans [xs[k], xs[k+1]).
    for (int k = 0; k + 1 < m; k += 2) {
      int c0 = std::max(0, int(std::ceil(xs[k] - 0.5)));
      int c1 = std::min(w, int(std::ceil(xs[k + 1] - 0.5)));
      for (int col = c0; col < c1; ++col) mask.set(row, col, true);
    }
  }
  return mask;
}

std::vector<Vec2> convex_hull(std::vector<Vec2> pts) {
  std::sort(pts.begin(), pts.end(), [](Vec2 a, Vec2 b) {
    return a.x < b.x || (a.x == b.x && a.y < b.y);
  });
  pts.erase(std::unique(pts.begin(), pts.end(),
                        [](Vec2 a, Vec2 b) { return a.x == b.x && a.y == b.y; }),
            pts.end());
  size_t n = pts.size();
  if (n < 3) return pts;

  std::vector<Vec2> hull(2 * n);
  size_t k = 0;
  for (size_t i = 0; i < n; ++i) {
    while (k >= 2 && cross3(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
    hull[k++] = pts[i];
  }
  for (size_t i = n - 1, lower = k + 1; i-- > 0;) {
    while (k >= lower && cross3(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
    hull[k++] = pts[i];
  }
  hull.resize(k - 1);
  return hull;
}

RotatedRect min_area_rect_of_points(std::span<const Vec2> pts) {
  if (pts.empty()) throw EmptyMask("no points to enclose");
  std::vector<Vec2> hull = convex_hull(std::vector<Vec2>(pts.begin(), pts.end()));

  if (hull.size() == 1)
    return RotatedRect{hull[0].x, hull[0].y, 0.0, 0.0, 0.0}.canonical();
  if (hull.size() == 2) {
    Vec2 d = hull[1] - hull[0];
    Vec2 c = (hull[0] + hull[1]) * 0.5;
    return RotatedRect{c.x, c.y, d.norm(), 0.0, std::atan2(d.y, d.x)}.canonical();
  }

  double best_area = std::numeric_limits<double>::infinity();
  RotatedRect best{};
  size_t n = hull.size();
  for (size_t i = 0; i < n; ++i) {
    Vec2 e = hull[(i + 1) % n] - hull[i];
    double len = e.norm();
    if (len < 1e-30) continue;
    Vec2 u{e.x / len, e.y / len};
    Vec2 m{-u.y, u.x};
    double ulo = 1e300, uhi = -1e300, vlo = 1e300, vhi = -1e300;
    for (const Vec2& p : hull) {
      double a = p.dot(u), b = p.dot(m);
      ulo = std::min(ulo, a);
      uhi = std::max(uhi, a);
      vlo = std::min(vlo, b);
      vhi = std::max(vhi, b);
    }
    double area = (uhi - ulo) * (vhi - vlo);
    if (area < best_area) {
      best_area = area;
      Vec2 c = u * ((ulo + uhi) * 0.5) + m * ((vlo + vhi) * 0.5);
      best = RotatedRect{c.x, c.y, uhi - ulo, vhi - vlo, std::atan2(u.y, u.x)};
    }
  }
  return best.canonical();
}

RotatedRect min_area_rotated_rect(const BinaryMask& mask) {
  std::vector<Vec2> centers;
  centers.reserve(64);
  for (int r = 0; r < mask.h; ++r)
    for (int c = 0; c < mask.w; ++c)
      if (mask.at(r, c)) centers.push_back({c + 0.5, r + 0.5});
  if (centers.empty()) throw EmptyMask("mask has no set cells");
  return min_area_rect_of_points(centers);
}

QuadPolygon RotatedRect::to_quad() const {
  double c = std::cos(theta), s = std::sin(theta);
  double hw = 0.5 * w, hh = 0.5 * h;
  auto corner = [&](double dx, double dy) -> Vec2 {
    return {cx + dx * c - dy * s, cy + dx * s + dy * c};
  };
  return QuadPolygon{{corner(-hw, -hh), corner(hw, -hh), corner(hw, hh), corner(-hw, hh)}};
}

RotatedRect RotatedRect::canonical() const {
  RotatedRect r = *this;
  r.w = std::abs(r.w);
  r.h = std::abs(r.h);
  if (r.w < r.h) {
    std::swap(r.w, r.h);
    r.theta += kPi / 2.0;
  }
  double t = std::fmod(r.theta + kPi / 4.0, kPi);
  if (t < 0) t += kPi;
  r.theta = t - kPi / 4.0;
  if (r.w - r.h <= 1e-12 * std::max(1.0, r.w)) {
    t = std::fmod(r.theta + kPi / 4.0, kPi / 2.0);
    if (t < 0) t += kPi / 2.0;
    r.theta = t - kPi / 4.0;
  }
  return r;
}

RotatedRect RotatedRect::scaled(double s) const {
  return RotatedRect{cx, cy, w * s, h * s, theta};
}

RotatedRect RotatedRect::from_quad(const QuadPolygon& q) {
  Vec2 c = (q.v[0] + q.v[1] + q.v[2] + q.v[3]) * 0.25;
  Vec2 e01 = q.v[1] - q.v[0];
  Vec2 e12 = q.v[2] - q.v[1];
  return RotatedRect{c.x, c.y, e01.norm(), e12.norm(), std::atan2(e01.y, e01.x)}
      .canonical();
}

double convex_quad_intersection_area(const QuadPolygon& a, const QuadPolygon& b) {
  QuadPolygon an = a.normalized();
  QuadPolygon bn = b.normalized();
  std::vector<Vec2> poly(an.v.begin(), an.v.end());
  std::vector<Vec2> next;
  for (int i = 0; i < 4 && !poly.empty(); ++i) {
    Vec2 p = bn.v[i], q = bn.v[(i + 1) % 4];
    next.clear();
    size_t n = poly.size();
    for (size_t j = 0; j < n; ++j) {
      Vec2 cur = poly[j], prv = poly[(j + n - 1) % n];
      double dc = cross3(p, q, cur);
      double dp = cross3(p, q, prv);
      bool cin = dc >= 0.0, pin = dp >= 0.0;
      if (cin != pin) {
        double t = dp / (dp - dc);
        next.push_back(prv + (cur - prv) * t);
      }
      if (cin) next.push_back(cur);
    }
    poly.swap(next);
  }
  if (poly.size() < 3) return 0.0;
  return std::abs(polygon_area(poly));
}

double rotated_iou(const RotatedRect& a, const RotatedRect& b) {
  double aa = a.area(), ab = b.area();
  if (aa < 1e-12 || ab < 1e-12) return 0.0;
  double inter = convex_quad_intersection_area(a.to_quad(), b.to_quad());
  double uni = aa + ab - inter;
  if (uni <= 0.0) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

double aabb_iou(const std::array<double, 4>& a, const std::array<double, 4>& b) {
  double ix = std::min(a[2], b[2]) - std::max(a[0], b[0]);
  double iy = std::min(a[3], b[3]) - std::max(a[1], b[1]);
  if (ix <= 0.0 || iy <= 0.0) return 0.0;
  double inter = ix * iy;
  double ua = std::max(0.0, a[2] - a[0]) * std::max(0.0, a[3] - a[1]);
  double ub = std::max(0.0, b[2] - b[0]) * std::max(0.0, b[3] - b[1]);
  double uni = ua + ub - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

}  // namespace kwspot
