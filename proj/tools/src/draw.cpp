#include "draw.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace kwspot::draw {

namespace {

void put(ImageRGB& img, int x, int y, Color c) {
  if (x < 0 || y < 0 || x >= img.w || y >= img.h) return;
  img.at(y, x, 0) = c[0];
  img.at(y, x, 1) = c[1];
  img.at(y, x, 2) = c[2];
}

// 5 columns x 7 rows, one byte per row (low 5 bits).
struct Glyph {
  char ch;
  std::array<uint8_t, 7> rows;
};

constexpr Glyph kFont[] = {
    {'0', {0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E}},
    {'1', {0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E}},
    {'2', {0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F}},
    {'3', {0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E}},
    {'4', {0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02}},
    {'5', {0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E}},
    {'6', {0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E}},
    {'7', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08}},
    {'8', {0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E}},
    {'9', {0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C}},
    {'.', {0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C}},
    {'-', {0x00, 0x00, 0x00, 0x1F, 0x00, 0x00, 0x00}},
    {'%', {0x19, 0x1A, 0x02, 0x04, 0x08, 0x0B, 0x13}},
    {'k', {0x10, 0x10, 0x12, 0x14, 0x18, 0x14, 0x12}},
    {' ', {0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00}},
};

const Glyph* find_glyph(char ch) {
  for (const Glyph& g : kFont)
    if (g.ch == ch) return &g;
  return nullptr;
}

}  // namespace

void line(ImageRGB& img, double x0, double y0, double x1, double y1, Color c) {
  const int steps = std::max(1, int(std::ceil(std::max(std::abs(x1 - x0), std::abs(y1 - y0)))));
  for (int i = 0; i <= steps; ++i) {
    const double t = double(i) / steps;
    put(img, int(std::lround(x0 + (x1 - x0) * t)), int(std::lround(y0 + (y1 - y0) * t)), c);
  }
}

void quad_outline(ImageRGB& img, const QuadPolygon& q, Color c) {
  for (int i = 0; i < 4; ++i) {
    const Vec2 a = q.v[size_t(i)], b = q.v[size_t((i + 1) % 4)];
    line(img, a.x, a.y, b.x, b.y, c);
  }
}

void text(ImageRGB& img, int x, int y, const std::string& s, Color c, int scale) {
  int cx = x;
  for (char ch : s) {
    const Glyph* g = find_glyph(ch);
    if (g) {
      for (int r = 0; r < 7; ++r)
        for (int col = 0; col < 5; ++col)
          if (g->rows[size_t(r)] & (1 << (4 - col)))
            for (int sy = 0; sy < scale; ++sy)
              for (int sx = 0; sx < scale; ++sx)
                put(img, cx + col * scale + sx, y + r * scale + sy, c);
    }
    cx += 6 * scale;
  }
}

namespace {

constexpr int kMargin = 40;

void frame(ImageRGB& img, const std::string& label) {
  line(img, kMargin, kMargin / 2.0, kMargin, img.h - kMargin, kGray);
  line(img, kMargin, img.h - kMargin, img.w - kMargin / 2.0, img.h - kMargin, kGray);
  text(img, kMargin, 8, label, kBlack);
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4g", v);
  return buf;
}

}  // namespace

ImageRGB render_series(const std::vector<double>& values, const std::string& label, int w,
                       int h) {
  ImageRGB img = ImageRGB::filled(h, w, 255, 255, 255);
  frame(img, label);
  if (values.empty()) return img;

  double lo = values[0], hi = values[0];
  for (double v : values) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (hi - lo < 1e-12) {
    lo -= 0.5;
    hi += 0.5;
  }
  const double x0 = kMargin, x1 = w - kMargin / 2.0;
  const double y0 = h - kMargin, y1 = kMargin / 2.0;
  auto px = [&](size_t i) {
    return values.size() > 1 ? x0 + (x1 - x0) * double(i) / double(values.size() - 1)
                             : (x0 + x1) / 2;
  };
  auto py = [&](double v) { return y0 + (y1 - y0) * (v - lo) / (hi - lo); };
  for (size_t i = 1; i < values.size(); ++i)
    line(img, px(i - 1), py(values[i - 1]), px(i), py(values[i]), kBlue);
  text(img, 2, int(y1) - 4, fmt(hi), kBlack);
  text(img, 2, int(y0) - 4, fmt(lo), kBlack);
  return img;
}

ImageRGB render_xy(const std::vector<std::pair<double, double>>& points,
                   const std::string& label, int w, int h) {
  ImageRGB img = ImageRGB::filled(h, w, 255, 255, 255);
  frame(img, label);
  const double x0 = kMargin, x1 = w - kMargin / 2.0;
  const double y0 = h - kMargin, y1 = kMargin / 2.0;
  auto px = [&](double x) { return x0 + (x1 - x0) * x; };
  auto py = [&](double y) { return y0 + (y1 - y0) * y; };
  double prev_x = 0.0, prev_y = 1.0;
  for (const auto& [x, y] : points) {
    line(img, px(prev_x), py(prev_y), px(x), py(prev_y), kBlue);
    line(img, px(x), py(prev_y), px(x), py(y), kBlue);
    prev_x = x;
    prev_y = y;
  }
  text(img, int(x0), int(y0) + 6, "0", kBlack);
  text(img, int(x1) - 6, int(y0) + 6, "1", kBlack);
  return img;
}

}  // namespace kwspot::draw
