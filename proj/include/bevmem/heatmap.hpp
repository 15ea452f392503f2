#pragma once

#include "bevmem/kernels.hpp"

BEVMEM_NS_BEGIN

// Temporal overlap heatmap: per-cell count of how many frames the cell has
// been inside the field of view. Maintained by warp-then-increment; counts
// are real-valued because the bilinear warp blurs them.
struct OverlapHeatmap {
  GridSpec spec;
  Tensor map;  // 1 x H x W

  static OverlapHeatmap init(const GridSpec& spec);
};

// Egomotion propagation with zero padding; newly entering regions are 0
// at this stage.
OverlapHeatmap propagate(const OverlapHeatmap& h, const Pose2& rel);
OverlapHeatmap propagate(const OverlapHeatmap& h, const FlowField& flow);

OverlapHeatmap increment(const OverlapHeatmap& h_hat);

// increment(propagate(h, rel))
OverlapHeatmap step(const OverlapHeatmap& h, const Pose2& rel);
OverlapHeatmap step(const OverlapHeatmap& h, const FlowField& flow);

BEVMEM_NS_END
