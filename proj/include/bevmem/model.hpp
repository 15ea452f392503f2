#pragma once

#include "bevmem/fusion.hpp"
#include "bevmem/synth.hpp"

BEVMEM_NS_BEGIN

struct ModelConfig {
  GridSpec grid{50, 100, 1.0};
  int channels = 256;  // C
  int t_wm = 4;
  int c_h = 32;
  int dil_h = 2;
  int dil_w = 2;
  bool temporal = true;     // off: stem + head only (single-frame bypass)
  bool use_heatmap = true;  // off: fuse memory and current feature only
  int obs_channels = kNumClasses;
  int num_classes = kNumClasses;

  FusionConfig fusion_config() const {
    return FusionConfig{channels, t_wm, c_h, dil_h, dil_w, use_heatmap};
  }
  void validate() const {
    grid.validate();
    if (channels < 1 || t_wm < 1 || c_h < 1 || dil_h < 1 || dil_w < 1)
      throw ConfigError("ModelConfig: channel counts and dilations must be >= 1");
  }
};

// Input stem (2 conv layers with ReLU), fusion block, 1x1 class head.
struct ModelParams {
  ModelConfig cfg;
  ConvLayer stem1, stem2;
  FusionParams fusion;  // unused when cfg.temporal is false
  ConvLayer head;

  // Deterministic inventory order; drives the optimizer and checkpoints.
  std::vector<Param*> all();
  std::vector<std::pair<std::string, const Tensor*>> named_tensors() const;
};

ModelParams init_model_params(std::uint64_t seed, const ModelConfig& cfg);

// Value-only stem pass; used to seed the working memory at sequence start.
Tensor stem_forward_value(const ModelParams& params, const Tensor& obs);

struct ForwardResult {
  Tape::Id logits = Tape::kNone;
  Tape::Id fused = Tape::kNone;
};

// stem(obs) -> F_BEV; fuse(stacked(wm), heatmap_features(wm.heatmap), F_BEV)
// -> unified feature; head -> logits. wm may be null only in single-frame
// mode. Throws on config mismatch.
ForwardResult forward_frame(Tape& tape, const ObservationFrame& obs, const WorkingMemory* wm,
                            ModelParams& params);

struct FocalOptions {
  real gamma = real(2.0);
  real alpha = real(0.25);
  real lambda1 = real(5.0);
};

Tape::Id focal_loss(Tape& tape, Tape::Id logits, const std::vector<std::uint8_t>& labels,
                    const FocalOptions& opt);

BEVMEM_NS_END
