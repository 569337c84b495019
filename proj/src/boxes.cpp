#include "affr/boxes.hpp"

#include <algorithm>
#include <cmath>

namespace affr {

namespace {
constexpr double kEps = 1e-12;
}

Corners box_corners(const Box& b) {
  return {b[0] - b[2] / 2, b[1] - b[3] / 2, b[0] + b[2] / 2, b[1] + b[3] / 2};
}

double box_l1(const Box& a, const Box& b) {
  double s = 0;
  for (int i = 0; i < 4; ++i) s += std::abs(a[i] - b[i]);
  return s;
}

double box_iou(const Box& a, const Box& b) {
  Corners ca = box_corners(a), cb = box_corners(b);
  double iw = std::max(0.0, std::min(ca.x2, cb.x2) - std::max(ca.x1, cb.x1));
  double ih = std::max(0.0, std::min(ca.y2, cb.y2) - std::max(ca.y1, cb.y1));
  double inter = iw * ih;
  double uni = a[2] * a[3] + b[2] * b[3] - inter;
  return inter / (uni + kEps);
}

double box_giou_loss(const Box& a, const Box& b) {
  Corners ca = box_corners(a), cb = box_corners(b);
  double iw = std::max(0.0, std::min(ca.x2, cb.x2) - std::max(ca.x1, cb.x1));
  double ih = std::max(0.0, std::min(ca.y2, cb.y2) - std::max(ca.y1, cb.y1));
  double inter = iw * ih;
  double uni = a[2] * a[3] + b[2] * b[3] - inter;
  double hw = std::max(ca.x2, cb.x2) - std::min(ca.x1, cb.x1);
  double hh = std::max(ca.y2, cb.y2) - std::min(ca.y1, cb.y1);
  double hull = hw * hh;
  double iou = inter / (uni + kEps);
  double penalty = (hull - uni) / (hull + kEps);
  return 1.0 - (iou - penalty);
}

}  // namespace affr
