#pragma once

// Shape coverage, line drawing and reference compositing on Image.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "trajvid/image.hpp"
#include "trajvid/triplet.hpp"
#include "trajvid/vocabulary.hpp"

namespace trajvid {

// Coverage test for a pixel center at offset (dx, dy) from the shape center.
// The triangle's vertices are placed so its area centroid is the center and
// it fits the size x size box.
inline bool shape_covers(Shape shape, double size, double dx, double dy) {
  const double h = size / 2.0;
  switch (shape) {
    case Shape::kCircle:
      return dx * dx + dy * dy <= h * h;
    case Shape::kSquare:
      return std::abs(dx) <= h && std::abs(dy) <= h;
    case Shape::kTriangle: {
      // apex (0, -h), base corners (+-h, h/2)
      if (dy > h / 2.0) return false;
      // edges from apex to base corners: |dx| <= (dy + h) * (h / 1.5h)
      return std::abs(dx) <= (dy + h) * (2.0 / 3.0);
    }
  }
  return false;
}

// Pixel offsets (pixel center minus object center) covered by a shape
// whose center sits on an integer pixel corner.
inline std::vector<Point2f> shape_mask_offsets(Shape shape, int size) {
  std::vector<Point2f> out;
  const int r = size / 2 + 2;
  for (int y = -r; y < r; ++y)
    for (int x = -r; x < r; ++x) {
      const double dx = x + 0.5, dy = y + 0.5;
      if (shape_covers(shape, size, dx, dy))
        out.push_back({static_cast<float>(dx), static_cast<float>(dy)});
    }
  return out;
}

inline void fill_shape(Image& img, Shape shape, int size, double cx, double cy, Rgb color) {
  const int x0 = std::max(0, static_cast<int>(std::floor(cx - size)));
  const int x1 = std::min(img.width() - 1, static_cast<int>(std::ceil(cx + size)));
  const int y0 = std::max(0, static_cast<int>(std::floor(cy - size)));
  const int y1 = std::min(img.height() - 1, static_cast<int>(std::ceil(cy + size)));
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x)
      if (shape_covers(shape, size, x + 0.5 - cx, y + 0.5 - cy)) img.set(x, y, color);
}

inline void draw_dot(Image& img, int x, int y, Rgb color, int radius = 1) {
  for (int dy = -radius; dy <= radius; ++dy)
    for (int dx = -radius; dx <= radius; ++dx)
      if (img.in_bounds(x + dx, y + dy)) img.set(x + dx, y + dy, color);
}

// Bresenham line, clipped to the image.
inline void draw_line(Image& img, int x0, int y0, int x1, int y1, Rgb color) {
  const int dx = std::abs(x1 - x0), sx = x0 < x1 ? 1 : -1;
  const int dy = -std::abs(y1 - y0), sy = y0 < y1 ? 1 : -1;
  int err = dx + dy;
  for (;;) {
    if (img.in_bounds(x0, y0)) img.set(x0, y0, color);
    if (x0 == x1 && y0 == y1) break;
    const int e2 = 2 * err;
    if (e2 >= dy) {
      err += dy;
      x0 += sx;
    }
    if (e2 <= dx) {
      err += dx;
      y0 += sy;
    }
  }
}

// Alpha-over composite of `ref` stretched to `box` and rotated by
// `rotation_deg` about the box center. Nearest-neighbour sampling.
inline void composite_reference(Image& dst, const Image& ref, const BBox& box, float rotation_deg) {
  if (ref.empty() || box.w <= 0.f || box.h <= 0.f) return;
  const double th = rotation_deg * std::numbers::pi / 180.0;
  const double c = std::cos(th), s = std::sin(th);
  // Extent of the rotated box bounds the pixels to visit.
  const double ext_w = box.w * std::abs(c) + box.h * std::abs(s);
  const double ext_h = box.w * std::abs(s) + box.h * std::abs(c);
  const int x0 = std::max(0, static_cast<int>(std::floor(box.cx - ext_w / 2.0)));
  const int x1 = std::min(dst.width() - 1, static_cast<int>(std::ceil(box.cx + ext_w / 2.0)));
  const int y0 = std::max(0, static_cast<int>(std::floor(box.cy - ext_h / 2.0)));
  const int y1 = std::min(dst.height() - 1, static_cast<int>(std::ceil(box.cy + ext_h / 2.0)));
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      const double px = x + 0.5 - box.cx, py = y + 0.5 - box.cy;
      // inverse rotation back into box-local coordinates
      const double lx = c * px - s * py;
      const double ly = s * px + c * py;
      const double u = (lx + box.w / 2.0) / box.w * ref.width();
      const double v = (ly + box.h / 2.0) / box.h * ref.height();
      if (u < 0.0 || v < 0.0 || u >= ref.width() || v >= ref.height()) continue;
      const auto* sp = ref.px(static_cast<int>(u), static_cast<int>(v));
      const unsigned a = sp[3];
      if (a == 0) continue;
      auto* dp = dst.px(x, y);
      if (a == 255) {
        dp[0] = sp[0];
        dp[1] = sp[1];
        dp[2] = sp[2];
      } else {
        for (int k = 0; k < 3; ++k)
          dp[k] = static_cast<std::uint8_t>((sp[k] * a + dp[k] * (255 - a) + 127) / 255);
      }
      dp[3] = 255;
    }
  }
}

}  // namespace trajvid
