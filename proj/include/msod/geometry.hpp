#pragma once

// Axis-aligned box arithmetic shared by the whole pipeline: IoU, greedy NMS,
// the (tx, ty, th, tw) offset parametrization and the smooth L1 penalty.
// Boxes are corner-stored in continuous image coordinates, sub-pixel allowed.

#include <optional>
#include <vector>

namespace msod {

struct Box {
  double x1 = 0.0, y1 = 0.0, x2 = 0.0, y2 = 0.0;

  Box() = default;
  // Throws std::invalid_argument unless corners are finite with x1 < x2, y1 < y2.
  Box(double x1, double y1, double x2, double y2);

  // Non-throwing variant; nullopt on an invalid corner set.
  static std::optional<Box> make(double x1, double y1, double x2, double y2) noexcept;
  // Size arguments follow the (h, w) convention used by the offset codec.
  static Box from_center(double cx, double cy, double h, double w);

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() * height(); }
  double cx() const { return 0.5 * (x1 + x2); }
  double cy() const { return 0.5 * (y1 + y2); }

  // Intersection with [0, width_limit] x [0, height_limit]; nullopt when the
  // box falls entirely outside (degenerate after clipping).
  std::optional<Box> clip(double width_limit, double height_limit) const;
};

// Intersection over union; 0 when the boxes do not overlap.
double iou(const Box& a, const Box& b);

// Offsets of a target box relative to an anchor, R-CNN parametrization:
//   tx = (x - xa) / wa, ty = (y - ya) / ha, th = log(h / ha), tw = log(w / wa).
struct Offset {
  double tx = 0.0, ty = 0.0, th = 0.0, tw = 0.0;
};

Offset encode_offset(const Box& anchor, const Box& target);

// Inverse of encode_offset. Always yields a valid Box: log-extents are clamped
// to +/-30, center displacement to +/-1e6 and extents floored at 1e-3 px, so
// pathological regressor outputs degrade gracefully instead of throwing.
Box decode_offset(const Box& anchor, const Offset& t);

// class_id indexes foreground classes only, [0, C).
struct Detection {
  int class_id = 0;
  Box box;
  double score = 0.0;
};

// Per-class greedy suppression: walk detections by descending score (ties by
// input position), drop any later same-class detection with IoU > threshold.
// Output stays sorted by descending score. threshold must lie in (0, 1).
std::vector<Detection> nms(const std::vector<Detection>& dets, double iou_threshold);

// 0.5 x^2 for |x| < 1, |x| - 0.5 otherwise.
double smooth_l1(double x);
double smooth_l1_grad(double x);

}  // namespace msod
