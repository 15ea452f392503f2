#include "bevmem/heatmap.hpp"

BEVMEM_NS_BEGIN

OverlapHeatmap OverlapHeatmap::init(const GridSpec& spec) {
  spec.validate();
  return {spec, Tensor::full({1, spec.h_cells, spec.w_cells}, real(1))};
}

OverlapHeatmap propagate(const OverlapHeatmap& h, const FlowField& flow) {
  return {h.spec, warp_forward(h.map, flow)};
}

OverlapHeatmap propagate(const OverlapHeatmap& h, const Pose2& rel) {
  return {h.spec, warp(h.map, rel, h.spec)};
}

OverlapHeatmap increment(const OverlapHeatmap& h_hat) {
  OverlapHeatmap out{h_hat.spec, h_hat.map};
  for (real& v : out.map.v) v += real(1);
  return out;
}

OverlapHeatmap step(const OverlapHeatmap& h, const Pose2& rel) {
  return increment(propagate(h, rel));
}

OverlapHeatmap step(const OverlapHeatmap& h, const FlowField& flow) {
  return increment(propagate(h, flow));
}

BEVMEM_NS_END
