#include "ssvg/geometry.hpp"

#include <cmath>

namespace ssvg {

namespace {
inline double clamp01(double v) { return std::min(1.0, std::max(0.0, v)); }
}  // namespace

CornerBox to_corners(const Box& b) {
  CornerBox c;
  c.x1 = clamp01(b.cx - b.w / 2.0);
  c.y1 = clamp01(b.cy - b.h / 2.0);
  c.x2 = clamp01(b.cx + b.w / 2.0);
  c.y2 = clamp01(b.cy + b.h / 2.0);
  return c;
}

CornerBox corners_raw(const Box& b) {
  return {b.cx - b.w / 2.0, b.cy - b.h / 2.0, b.cx + b.w / 2.0, b.cy + b.h / 2.0};
}

double box_area(const CornerBox& b) {
  return std::max(0.0, b.x2 - b.x1) * std::max(0.0, b.y2 - b.y1);
}

double iou(const CornerBox& a, const CornerBox& b) {
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  const double inter = std::max(0.0, iw) * std::max(0.0, ih);
  const double uni = box_area(a) + box_area(b) - inter;
  if (uni <= 0.0) return 0.0;
  return inter / uni;
}

double giou(const CornerBox& a, const CornerBox& b) {
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  const double inter = std::max(0.0, iw) * std::max(0.0, ih);
  const double uni = box_area(a) + box_area(b) - inter;
  const double hw = std::max(a.x2, b.x2) - std::min(a.x1, b.x1);
  const double hh = std::max(a.y2, b.y2) - std::min(a.y1, b.y1);
  const double hull = std::max(0.0, hw) * std::max(0.0, hh);
  if (hull <= 0.0) return 0.0;
  const double i = uni > 0.0 ? inter / uni : 0.0;
  return i - (hull - uni) / hull;
}

int quantize_coord(double v, int bins) {
  const int b = static_cast<int>(std::floor(v * bins));
  return std::min(bins - 1, std::max(0, b));
}

double dequantize_coord(int bin, int bins) { return (bin + 0.5) / bins; }

QuantizedBox quantize(const Box& b, int bins) {
  return {quantize_coord(b.cx, bins), quantize_coord(b.cy, bins), quantize_coord(b.w, bins),
          quantize_coord(b.h, bins)};
}

Box dequantize(const QuantizedBox& q, int bins) {
  return {dequantize_coord(q.bx, bins), dequantize_coord(q.by, bins), dequantize_coord(q.bw, bins),
          dequantize_coord(q.bh, bins)};
}

double l1_loss(const Box& pred, const Box& gold) {
  return std::abs(pred.cx - gold.cx) + std::abs(pred.cy - gold.cy) + std::abs(pred.w - gold.w) +
         std::abs(pred.h - gold.h);
}

double giou_loss(const Box& pred, const Box& gold) {
  return 1.0 - giou(corners_raw(pred), corners_raw(gold));
}

double giou_loss_grad(const Box& pred, const Box& gold, double grad[4]) {
  const CornerBox p = corners_raw(pred);
  const CornerBox g = corners_raw(gold);

  // Derivatives of p's corners w.r.t. (cx, cy, w, h):
  //   x1 = cx - w/2, x2 = cx + w/2, y1 = cy - h/2, y2 = cy + h/2.
  // Everything below is expressed in d/d{x1,y1,x2,y2} first, then chained.
  const double iw = std::min(p.x2, g.x2) - std::max(p.x1, g.x1);
  const double ih = std::min(p.y2, g.y2) - std::max(p.y1, g.y1);
  const double inter = std::max(0.0, iw) * std::max(0.0, ih);
  const double ap = (p.x2 - p.x1) * (p.y2 - p.y1);
  const double ag = (g.x2 - g.x1) * (g.y2 - g.y1);
  const double uni = ap + ag - inter;
  const double hw = std::max(p.x2, g.x2) - std::min(p.x1, g.x1);
  const double hh = std::max(p.y2, g.y2) - std::min(p.y1, g.y1);
  const double hull = hw * hh;

  for (int i = 0; i < 4; ++i) grad[i] = 0.0;
  if (hull <= 0.0 || uni <= 0.0) return 1.0 - giou(p, g);

  // d inter / d corners (zero if the overlap is empty in that axis)
  double dI_dx1 = 0.0, dI_dx2 = 0.0, dI_dy1 = 0.0, dI_dy2 = 0.0;
  if (iw > 0.0 && ih > 0.0) {
    if (p.x1 > g.x1) dI_dx1 = -ih;
    if (p.x2 < g.x2) dI_dx2 = ih;
    if (p.y1 > g.y1) dI_dy1 = -iw;
    if (p.y2 < g.y2) dI_dy2 = iw;
  }
  // d area_p / d corners
  const double dA_dx1 = -(p.y2 - p.y1);
  const double dA_dx2 = (p.y2 - p.y1);
  const double dA_dy1 = -(p.x2 - p.x1);
  const double dA_dy2 = (p.x2 - p.x1);
  // d hull / d corners (active only when p's corner defines the hull side)
  double dH_dx1 = 0.0, dH_dx2 = 0.0, dH_dy1 = 0.0, dH_dy2 = 0.0;
  if (p.x1 < g.x1) dH_dx1 = -hh;
  if (p.x2 > g.x2) dH_dx2 = hh;
  if (p.y1 < g.y1) dH_dy1 = -hw;
  if (p.y2 > g.y2) dH_dy2 = hw;

  // giou = I/U - (H - U)/H = I/U - 1 + U/H
  // d giou = (dI*U - I*dU)/U^2 + (dU*H - U*dH)/H^2, with dU = dA - dI.
  auto corner_grad = [&](double dI, double dA, double dH) {
    const double dU = dA - dI;
    const double d_iou = (dI * uni - inter * dU) / (uni * uni);
    const double d_pen = (dU * hull - uni * dH) / (hull * hull);
    return -(d_iou + d_pen);  // loss = 1 - giou
  };
  const double gx1 = corner_grad(dI_dx1, dA_dx1, dH_dx1);
  const double gx2 = corner_grad(dI_dx2, dA_dx2, dH_dx2);
  const double gy1 = corner_grad(dI_dy1, dA_dy1, dH_dy1);
  const double gy2 = corner_grad(dI_dy2, dA_dy2, dH_dy2);

  grad[0] = gx1 + gx2;                  // d/d cx
  grad[1] = gy1 + gy2;                  // d/d cy
  grad[2] = 0.5 * (gx2 - gx1);          // d/d w
  grad[3] = 0.5 * (gy2 - gy1);          // d/d h
  return 1.0 - (inter / uni - (hull - uni) / hull);
}

}  // namespace ssvg
