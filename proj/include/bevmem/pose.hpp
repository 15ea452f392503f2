#pragma once

#include <vector>

#include "bevmem/common.hpp"

BEVMEM_NS_BEGIN

// SE(2) pose: translation in meters, yaw in radians, normalized to (-pi, pi].
// Pose algebra runs in double regardless of the library real type; yaw drift
// over long sequences is the concern.
struct Pose2 {
  double x = 0.0;
  double y = 0.0;
  double yaw = 0.0;
};

double normalize_yaw(double yaw);

// Pose of frame b expressed through frame a.
Pose2 compose(const Pose2& a, const Pose2& b);
Pose2 inverse(const Pose2& p);

struct Point2 {
  double x = 0.0;
  double y = 0.0;
};

// Coordinates of a point (given in p's frame) in the parent frame.
Point2 apply(const Pose2& p, const Point2& pt);

// T such that a world-fixed point known in the previous ego frame maps to
// its coordinates in the current ego frame.
Pose2 relative_transform(const Pose2& pose_prev, const Pose2& pose_cur);

// Ego-centered BEV grid. Row index i runs along ego-left y (h axis), column
// index j along ego-forward x (w axis). Values live at cell centers.
struct GridSpec {
  int h_cells = 50;
  int w_cells = 100;
  double cell_size_m = 1.0;

  bool operator==(const GridSpec&) const = default;

  void validate() const {
    if (h_cells < 1 || w_cells < 1 || cell_size_m <= 0.0)
      throw ConfigError("GridSpec: need h_cells >= 1, w_cells >= 1, cell_size_m > 0");
  }

  Point2 grid_to_ego(double i, double j) const {
    return {(j - 0.5 * (w_cells - 1)) * cell_size_m, (i - 0.5 * (h_cells - 1)) * cell_size_m};
  }
  // returns fractional (i, j)
  Point2 ego_to_grid_ij(const Point2& p) const {
    return {p.y / cell_size_m + 0.5 * (h_cells - 1), p.x / cell_size_m + 0.5 * (w_cells - 1)};
  }
};

// Backward mapping for warps: for every destination cell center in the
// current frame, the fractional grid coordinates of the same world point in
// the previous frame's grid. Out-of-bounds means outside [0,h-1]x[0,w-1].
struct FlowField {
  int h = 0;
  int w = 0;
  std::vector<double> src_i;  // h*w, row-major
  std::vector<double> src_j;

  bool in_bounds(int cell) const {
    return src_i[cell] >= 0.0 && src_i[cell] <= h - 1 && src_j[cell] >= 0.0 &&
           src_j[cell] <= w - 1;
  }
};

// rel is the previous->current transform (relative_transform output). The
// destination->source map is its inverse, evaluated in grid units so the
// identity transform yields exactly integral coordinates.
FlowField backward_flow(const GridSpec& spec, const Pose2& rel);

BEVMEM_NS_END
