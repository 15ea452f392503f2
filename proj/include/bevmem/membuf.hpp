#pragma once

#include "bevmem/heatmap.hpp"

BEVMEM_NS_BEGIN

// Fixed-lag FIFO of post-fusion BEV features plus the overlap heatmap.
// Entries are detached value tensors: gradients never flow through the
// buffer. The buffer always holds exactly `capacity` entries and is kept
// expressed in the latest ego frame by advance().
class WorkingMemory {
 public:
  WorkingMemory() = default;

  // capacity copies of the first frame's BEV feature, heatmap all ones.
  static WorkingMemory init(const Tensor& f_bev_t0, int capacity, const GridSpec& spec);

  // One-shot replacement of every entry right after the first fusion of a
  // sequence. Rejected once the buffer has advanced.
  void replace_initial(const Tensor& fused_t0);

  // Append fused_t, evict the oldest entry, warp everything (entries and
  // heatmap) into the next ego frame, and increment the heatmap.
  void advance(const Tensor& fused_t, const Pose2& rel_next);

  // Channel concatenation, oldest entry first: (capacity * C) x H x W.
  Tensor stacked() const;

  int capacity() const { return capacity_; }
  int frames_advanced() const { return advances_; }
  const std::vector<Tensor>& entries() const { return entries_; }
  const OverlapHeatmap& heatmap() const { return heatmap_; }
  const GridSpec& spec() const { return spec_; }

 private:
  GridSpec spec_;
  int capacity_ = 0;
  int advances_ = 0;
  bool replaced_initial_ = false;
  std::vector<Tensor> entries_;  // oldest first
  OverlapHeatmap heatmap_;
};

BEVMEM_NS_END
