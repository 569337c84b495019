// Plain-double box math and ground-truth sample types.
//
// Boxes are normalized (cx, cy, w, h) in [0,1]. The scalar routines here
// mirror the differentiable loss formulas and serve matching-cost assembly
// and evaluation, where no gradients are needed.
#pragma once

#include <array>
#include <vector>

#include "affr/image.hpp"

namespace affr {

using Box = std::array<double, 4>;  // cx, cy, w, h

struct Corners {
  double x1, y1, x2, y2;
};

Corners box_corners(const Box& b);

double box_l1(const Box& a, const Box& b);
// Plain intersection-over-union on (cx,cy,w,h) boxes.
double box_iou(const Box& a, const Box& b);
// Generalized IoU loss 1 - (IoU - |hull \ union| / |hull|), in [0, 2].
// Denominators carry a 1e-12 guard; two zero-area boxes give loss 1.
double box_giou_loss(const Box& a, const Box& b);

// One annotated object: geometry plus its soft token-span target row.
struct GroundTruthObject {
  Box box{};
  Mask mask;                    // at image resolution
  std::vector<double> p_span;   // length n_max, sums to 1
  int category_id = -1;
};

struct GroundTruthSet {
  std::vector<GroundTruthObject> objects;
  int img_h = 0;
  int img_w = 0;

  int n_gt() const { return int(objects.size()); }
};

}  // namespace affr
