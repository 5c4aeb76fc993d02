#pragma once

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "kwspot/geometry.hpp"
#include "kwspot/image.hpp"

namespace kwspot::draw {

using Color = std::array<uint8_t, 3>;

inline constexpr Color kRed{255, 48, 48};
inline constexpr Color kGreen{48, 220, 48};
inline constexpr Color kBlue{64, 88, 200};
inline constexpr Color kGray{180, 180, 180};
inline constexpr Color kBlack{16, 16, 16};

void line(ImageRGB& img, double x0, double y0, double x1, double y1, Color c);
void quad_outline(ImageRGB& img, const QuadPolygon& q, Color c);

// 5x7 bitmap font covering digits, '.', '-', '%', 'k' and space.
void text(ImageRGB& img, int x, int y, const std::string& s, Color c, int scale = 1);

// Polyline chart of y-values over their index (loss curves).
ImageRGB render_series(const std::vector<double>& values, const std::string& label,
                       int w = 640, int h = 360);

// Step plot of (x, y) points in [0,1]^2 (PR curves).
ImageRGB render_xy(const std::vector<std::pair<double, double>>& points,
                   const std::string& label, int w = 480, int h = 480);

}  // namespace kwspot::draw
