#pragma once

#include "bevmem/membuf.hpp"
#include "bevmem/tape.hpp"

BEVMEM_NS_BEGIN

struct ConvLayer {
  Param w;  // out x in x k x k
  Param b;  // out
  int k = 3;
  int dil_h = 1;
  int dil_w = 1;
};

struct FusionConfig {
  int channels = 256;  // C
  int t_wm = 4;
  int c_h = 32;
  int dil_h = 2;
  int dil_w = 2;
  bool heatmap_branch = true;

  int mem_in_channels() const {
    return t_wm * channels + (heatmap_branch ? c_h : 0) + channels;
  }
};

// Conv_H (1 -> 16 -> 16 -> C_H, sigmoid applied by heatmap_features),
// Conv_Mem (three dilated 3x3 layers with ReLU), and the layer norm affine.
struct FusionParams {
  FusionConfig cfg;
  std::vector<ConvLayer> conv_h;    // empty when the heatmap branch is off
  std::vector<ConvLayer> conv_mem;  // 3 layers
  Param ln_gain;
  Param ln_bias;
};

// Fan-in scaled uniform init (bound sqrt(1/fan_in)), zero biases, unit
// layer-norm gain. Bit-identical for identical seeds.
FusionParams init_fusion_params(std::uint64_t seed, const FusionConfig& cfg);
ConvLayer init_conv_layer(Rng& rng, const std::string& name, int out_ch, int in_ch, int k,
                          int dil_h, int dil_w);

// Eq-style heatmap feature branch: sigmoid(Conv_H(H_t)). The heatmap is a
// constant input signal; gradients flow to the Conv_H parameters only.
Tape::Id heatmap_features(Tape& tape, const OverlapHeatmap& h, FusionParams& p);

// Unified BEV feature: layer_norm(Conv_Mem(concat(memory, heatmap feature,
// current))). h_feat is kNone when the heatmap branch is disabled.
Tape::Id fuse(Tape& tape, const Tensor& wm_stacked, Tape::Id h_feat, Tape::Id f_bev,
              FusionParams& p);

void append_fusion_params(FusionParams& p, std::vector<Param*>& out);

BEVMEM_NS_END
