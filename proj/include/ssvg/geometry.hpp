#pragma once

#include <algorithm>

namespace ssvg {

// Normalized center-format bounding box, the regression target/prediction.
struct Box {
  double cx = 0.0;
  double cy = 0.0;
  double w = 0.0;
  double h = 0.0;
};

struct CornerBox {
  double x1 = 0.0;
  double y1 = 0.0;
  double x2 = 0.0;
  double y2 = 0.0;
};

// Discrete bin indices of the four coordinates, each in [0, bins).
struct QuantizedBox {
  int bx = 0;
  int by = 0;
  int bw = 0;
  int bh = 0;
};

// Corner conversion clamped to the unit image. Used for metrics/evaluation.
CornerBox to_corners(const Box& b);

// Raw (unclamped) corner conversion; losses use this so their gradients do
// not die where a box spills past the image border.
CornerBox corners_raw(const Box& b);

double box_area(const CornerBox& b);

// Intersection over union on corner boxes. Returns 0 when both are degenerate.
double iou(const CornerBox& a, const CornerBox& b);

// IoU minus the fraction of the enclosing hull not covered by the union.
// Range (-1, 1]; returns 0 on a zero-area hull.
double giou(const CornerBox& a, const CornerBox& b);

int quantize_coord(double v, int bins);
double dequantize_coord(int bin, int bins);

QuantizedBox quantize(const Box& b, int bins);
Box dequantize(const QuantizedBox& q, int bins);

// Sum of absolute coordinate differences in center format.
double l1_loss(const Box& pred, const Box& gold);

// 1 - giou on raw corners; zero iff the boxes coincide with positive area.
double giou_loss(const Box& pred, const Box& gold);

// giou_loss plus its gradient w.r.t. pred's (cx, cy, w, h). Subgradients at
// the min/max branch points follow the branch that was taken.
double giou_loss_grad(const Box& pred, const Box& gold, double grad[4]);

}  // namespace ssvg
