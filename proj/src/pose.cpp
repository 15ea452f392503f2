#include "bevmem/pose.hpp"

BEVMEM_NS_BEGIN

double normalize_yaw(double yaw) {
  double y = std::fmod(yaw + M_PI, 2.0 * M_PI);
  if (y <= 0.0) y += 2.0 * M_PI;
  return y - M_PI;  // (-pi, pi]
}

Pose2 compose(const Pose2& a, const Pose2& b) {
  const double c = std::cos(a.yaw), s = std::sin(a.yaw);
  return {a.x + c * b.x - s * b.y, a.y + s * b.x + c * b.y, normalize_yaw(a.yaw + b.yaw)};
}

Pose2 inverse(const Pose2& p) {
  const double c = std::cos(p.yaw), s = std::sin(p.yaw);
  return {-(c * p.x + s * p.y), -(-s * p.x + c * p.y), normalize_yaw(-p.yaw)};
}

Point2 apply(const Pose2& p, const Point2& pt) {
  const double c = std::cos(p.yaw), s = std::sin(p.yaw);
  return {p.x + c * pt.x - s * pt.y, p.y + s * pt.x + c * pt.y};
}

Pose2 relative_transform(const Pose2& pose_prev, const Pose2& pose_cur) {
  return compose(inverse(pose_cur), pose_prev);
}

FlowField backward_flow(const GridSpec& spec, const Pose2& rel) {
  spec.validate();
  const Pose2 inv = inverse(rel);
  const double c = std::cos(inv.yaw), s = std::sin(inv.yaw);
  const double ci = 0.5 * (spec.h_cells - 1), cj = 0.5 * (spec.w_cells - 1);
  // src_j = c*(j-cj) - s*(i-ci) + tx/cell + cj   (x row of the rotation)
  // src_i = s*(j-cj) + c*(i-ci) + ty/cell + ci
  // cell_size cancels except in the translation, which keeps the identity
  // transform exactly integral for any cell size.
  const double tj = inv.x / spec.cell_size_m;
  const double ti = inv.y / spec.cell_size_m;

  FlowField f;
  f.h = spec.h_cells;
  f.w = spec.w_cells;
  f.src_i.resize(static_cast<std::size_t>(f.h) * f.w);
  f.src_j.resize(static_cast<std::size_t>(f.h) * f.w);
  for (int i = 0; i < f.h; ++i) {
    const double di = i - ci;
    for (int j = 0; j < f.w; ++j) {
      const double dj = j - cj;
      const std::size_t idx = static_cast<std::size_t>(i) * f.w + j;
      f.src_j[idx] = c * dj - s * di + tj + cj;
      f.src_i[idx] = s * dj + c * di + ti + ci;
    }
  }
  return f;
}

BEVMEM_NS_END
