#pragma once

#include <array>

namespace sfdet {

/// Normalized center-format box.
struct Box {
  double cx = 0.5, cy = 0.5, w = 0.0, h = 0.0;

  double x1() const { return cx - 0.5 * w; }
  double y1() const { return cy - 0.5 * h; }
  double x2() const { return cx + 0.5 * w; }
  double y2() const { return cy + 0.5 * h; }
  double area() const { return w > 0 && h > 0 ? w * h : 0.0; }

  static Box from_corners(double x1, double y1, double x2, double y2) {
    return Box{0.5 * (x1 + x2), 0.5 * (y1 + y2), x2 - x1, y2 - y1};
  }
  friend bool operator==(const Box&, const Box&) = default;
};

double iou(const Box& a, const Box& b);

/// Generalized IoU in [−1, 1]. Degenerate boxes have area 0.
double giou(const Box& a, const Box& b);

/// GIoU together with its (sub)gradient with respect to a's (cx, cy, w, h).
double giou_with_grad(const Box& a, const Box& b, std::array<double, 4>& grad_a);

}  // namespace sfdet
