#pragma once

#include <algorithm>
#include <cmath>

namespace sodm {

// Axis-aligned box in absolute pixels, (x, y) top-left corner.
struct Box {
  double x = 0, y = 0, w = 0, h = 0;
  double area() const { return w * h; }
};

struct Detection {
  int image_id = 0;
  Box box;
  int class_id = 0;
  double score = 0;
  int level = 0;
};

struct GroundTruthBox {
  int image_id = 0;
  Box box;
  int class_id = 0;
  double area() const { return box.area(); }
};

inline double iou(const Box& a, const Box& b) {
  double ix = std::max(0.0, std::min(a.x + a.w, b.x + b.w) - std::max(a.x, b.x));
  double iy = std::max(0.0, std::min(a.y + a.h, b.y + b.h) - std::max(a.y, b.y));
  double inter = ix * iy;
  double uni = a.area() + b.area() - inter;
  return uni > 0 ? inter / uni : 0.0;
}

}  // namespace sodm
