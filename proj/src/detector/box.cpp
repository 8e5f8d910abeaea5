#include "sfdet/detector/box.hpp"

#include <algorithm>

namespace sfdet {

double iou(const Box& a, const Box& b) {
  const double iw = std::max(0.0, std::min(a.x2(), b.x2()) - std::max(a.x1(), b.x1()));
  const double ih = std::max(0.0, std::min(a.y2(), b.y2()) - std::max(a.y1(), b.y1()));
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

double giou(const Box& a, const Box& b) {
  std::array<double, 4> unused{};
  return giou_with_grad(a, b, unused);
}

double giou_with_grad(const Box& a, const Box& b, std::array<double, 4>& grad) {
  grad = {0, 0, 0, 0};
  const double ax1 = a.x1(), ax2 = a.x2(), ay1 = a.y1(), ay2 = a.y2();
  const double bx1 = b.x1(), bx2 = b.x2(), by1 = b.y1(), by2 = b.y2();

  const double raw_iw = std::min(ax2, bx2) - std::max(ax1, bx1);
  const double raw_ih = std::min(ay2, by2) - std::max(ay1, by1);
  const double iw = std::max(0.0, raw_iw), ih = std::max(0.0, raw_ih);
  const double inter = iw * ih;
  const double area_a = a.area(), area_b = b.area();
  const double uni = area_a + area_b - inter;
  const double ew = std::max(ax2, bx2) - std::min(ax1, bx1);
  const double eh = std::max(ay2, by2) - std::min(ay1, by1);
  const double enc = std::max(0.0, ew) * std::max(0.0, eh);

  if (uni <= 0.0) return 0.0;
  const double iou_v = inter / uni;
  if (enc <= 0.0) return iou_v;
  const double value = iou_v - (enc - uni) / enc;

  // value = I/U − 1 + U/E with U = Aa + Ab − I.
  const double d_inter = (uni + inter) / (uni * uni) - 1.0 / enc;
  const double d_area_a = -inter / (uni * uni) + 1.0 / enc;
  const double d_enc = -uni / (enc * enc);

  double g_x1 = 0, g_x2 = 0, g_y1 = 0, g_y2 = 0, g_w = 0, g_h = 0;
  if (raw_iw > 0 && raw_ih > 0) {
    const double di_diw = ih, di_dih = iw;
    if (ax2 < bx2) g_x2 += d_inter * di_diw;
    if (ax1 > bx1) g_x1 -= d_inter * di_diw;
    if (ay2 < by2) g_y2 += d_inter * di_dih;
    if (ay1 > by1) g_y1 -= d_inter * di_dih;
  }
  if (a.w > 0 && a.h > 0) {
    g_w += d_area_a * a.h;
    g_h += d_area_a * a.w;
  }
  if (ax2 >= bx2) g_x2 += d_enc * eh;
  if (ax1 <= bx1) g_x1 -= d_enc * eh;
  if (ay2 >= by2) g_y2 += d_enc * ew;
  if (ay1 <= by1) g_y1 -= d_enc * ew;

  grad[0] = g_x1 + g_x2;
  grad[1] = g_y1 + g_y2;
  grad[2] = g_w + 0.5 * (g_x2 - g_x1);
  grad[3] = g_h + 0.5 * (g_y2 - g_y1);
  return value;
}

}  // namespace sfdet
