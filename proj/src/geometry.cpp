#include "msod/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace msod {

namespace {

bool corners_valid(double x1, double y1, double x2, double y2) {
  return std::isfinite(x1) && std::isfinite(y1) && std::isfinite(x2) &&
         std::isfinite(y2) && x1 < x2 && y1 < y2;
}

constexpr double kMaxLogExtent = 30.0;
constexpr double kMaxShift = 1e6;
constexpr double kMinExtent = 1e-3;

}  // namespace

Box::Box(double x1, double y1, double x2, double y2) : x1(x1), y1(y1), x2(x2), y2(y2) {
  if (!corners_valid(x1, y1, x2, y2))
    throw std::invalid_argument("Box: corners must be finite with x1 < x2 and y1 < y2");
}

std::optional<Box> Box::make(double x1, double y1, double x2, double y2) noexcept {
  if (!corners_valid(x1, y1, x2, y2)) return std::nullopt;
  Box b;
  b.x1 = x1;
  b.y1 = y1;
  b.x2 = x2;
  b.y2 = y2;
  return b;
}

Box Box::from_center(double cx, double cy, double h, double w) {
  return Box(cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h);
}

std::optional<Box> Box::clip(double width_limit, double height_limit) const {
  const double nx1 = std::clamp(x1, 0.0, width_limit);
  const double ny1 = std::clamp(y1, 0.0, height_limit);
  const double nx2 = std::clamp(x2, 0.0, width_limit);
  const double ny2 = std::clamp(y2, 0.0, height_limit);
  return Box::make(nx1, ny1, nx2, ny2);
}

double iou(const Box& a, const Box& b) {
  const double ix = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double iy = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (ix <= 0.0 || iy <= 0.0) return 0.0;
  const double inter = ix * iy;
  return inter / (a.area() + b.area() - inter);
}

Offset encode_offset(const Box& anchor, const Box& target) {
  Offset t;
  t.tx = (target.cx() - anchor.cx()) / anchor.width();
  t.ty = (target.cy() - anchor.cy()) / anchor.height();
  t.th = std::log(target.height() / anchor.height());
  t.tw = std::log(target.width() / anchor.width());
  return t;
}

Box decode_offset(const Box& anchor, const Offset& t) {
  const double cx = anchor.cx() + std::clamp(t.tx, -kMaxShift, kMaxShift) * anchor.width();
  const double cy = anchor.cy() + std::clamp(t.ty, -kMaxShift, kMaxShift) * anchor.height();
  const double h =
      std::max(anchor.height() * std::exp(std::clamp(t.th, -kMaxLogExtent, kMaxLogExtent)), kMinExtent);
  const double w =
      std::max(anchor.width() * std::exp(std::clamp(t.tw, -kMaxLogExtent, kMaxLogExtent)), kMinExtent);
  return Box(cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h);
}

std::vector<Detection> nms(const std::vector<Detection>& dets, double iou_threshold) {
  if (!(iou_threshold > 0.0 && iou_threshold < 1.0))
    throw std::invalid_argument("nms: iou_threshold must lie in (0, 1)");
  std::vector<size_t> order(dets.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    if (dets[a].score != dets[b].score) return dets[a].score > dets[b].score;
    return a < b;
  });
  std::vector<char> suppressed(dets.size(), 0);
  std::vector<Detection> kept;
  for (size_t i = 0; i < order.size(); ++i) {
    const size_t a = order[i];
    if (suppressed[a]) continue;
    kept.push_back(dets[a]);
    for (size_t j = i + 1; j < order.size(); ++j) {
      const size_t b = order[j];
      if (suppressed[b] || dets[b].class_id != dets[a].class_id) continue;
      if (iou(dets[a].box, dets[b].box) > iou_threshold) suppressed[b] = 1;
    }
  }
  return kept;
}

double smooth_l1(double x) {
  const double ax = std::abs(x);
  return ax < 1.0 ? 0.5 * x * x : ax - 0.5;
}

double smooth_l1_grad(double x) {
  if (x > 1.0) return 1.0;
  if (x < -1.0) return -1.0;
  return x;
}

}  // namespace msod
