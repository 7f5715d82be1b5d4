#pragma once

#include <algorithm>

namespace wslc {

// Pixel rectangle [x1, x2) x [y1, y2) with a score.
struct Box {
  int x1 = 0, y1 = 0, x2 = 1, y2 = 1;
  double score = 0.0;

  int width() const { return x2 - x1; }
  int height() const { return y2 - y1; }
  long area() const { return static_cast<long>(width()) * height(); }
  bool valid_in(int image_width, int image_height) const {
    return 0 <= x1 && x1 < x2 && x2 <= image_width && 0 <= y1 && y1 < y2 && y2 <= image_height;
  }
  bool same_extent(const Box& o) const { return x1 == o.x1 && y1 == o.y1 && x2 == o.x2 && y2 == o.y2; }

  friend bool operator==(const Box&, const Box&) = default;
};

inline long intersection_area(const Box& a, const Box& b) {
  const long w = std::max(0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
  const long h = std::max(0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
  return w * h;
}

// |a ∩ b| / |a ∪ b|.
inline double iou(const Box& a, const Box& b) {
  const long inter = intersection_area(a, b);
  const long uni = a.area() + b.area() - inter;
  return uni > 0 ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;
}

}  // namespace wslc
