#include "bevmem/membuf.hpp"

BEVMEM_NS_BEGIN

WorkingMemory WorkingMemory::init(const Tensor& f_bev_t0, int capacity, const GridSpec& spec) {
  if (capacity < 1) throw ConfigError("WorkingMemory: capacity must be >= 1");
  if (f_bev_t0.rank() != 3 || f_bev_t0.h() != spec.h_cells || f_bev_t0.w() != spec.w_cells)
    throw ShapeError("WorkingMemory: feature " + shape_str(f_bev_t0.shape) +
                     " does not match grid spec");
  WorkingMemory wm;
  wm.spec_ = spec;
  wm.capacity_ = capacity;
  wm.entries_.assign(static_cast<std::size_t>(capacity), f_bev_t0);
  wm.heatmap_ = OverlapHeatmap::init(spec);
  return wm;
}

void WorkingMemory::replace_initial(const Tensor& fused_t0) {
  if (advances_ != 0 || replaced_initial_)
    throw std::logic_error("WorkingMemory: replace_initial is only valid once, before any advance");
  if (!fused_t0.same_shape(entries_.front()))
    throw ShapeError("WorkingMemory: replace_initial shape mismatch");
  entries_.assign(static_cast<std::size_t>(capacity_), fused_t0);
  replaced_initial_ = true;
}

void WorkingMemory::advance(const Tensor& fused_t, const Pose2& rel_next) {
  if (!fused_t.same_shape(entries_.front()))
    throw ShapeError("WorkingMemory: advance got " + shape_str(fused_t.shape) + ", buffer holds " +
                     shape_str(entries_.front().shape));
  entries_.erase(entries_.begin());
  entries_.push_back(fused_t);
  const FlowField flow = backward_flow(spec_, rel_next);
  for (Tensor& e : entries_) e = warp_forward(e, flow);
  heatmap_ = step(heatmap_, flow);
  ++advances_;
}

Tensor WorkingMemory::stacked() const {
  std::vector<const Tensor*> parts;
  parts.reserve(entries_.size());
  for (const Tensor& e : entries_) parts.push_back(&e);
  return concat_channels(parts);
}

BEVMEM_NS_END
