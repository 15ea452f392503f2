#pragma once

#include "bevmem/train.hpp"

BEVMEM_NS_BEGIN

// Run configuration parsed from a sectioned key=value file. Every key is
// validated with a range check and unknown keys are rejected. The default
// values reproduce the benchmark preset.
struct RunConfig {
  // [grid]
  GridSpec grid{32, 64, 1.0};
  // [model]
  int channels = 64;
  int t_wm = 4;
  int c_h = 32;
  int dil_h = 2;
  int dil_w = 2;
  bool temporal = true;
  bool heatmap = true;
  // [training]
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 1e-2;
  int stage1_epochs = 1;
  int stage2_epochs = 1;
  int stage1_frames_per_scenario = 1;
  std::uint64_t seed = 1;
  bool deterministic = true;
  double lambda1 = 5.0;
  double lambda2 = 50.0;  // polyline loss weight; retained, unused
  double lambda3 = 0.1;   // transformation loss weight; retained, unused
  double focal_gamma = 2.0;
  double focal_alpha = 0.25;
  // [data]
  int scenario_count = 200;
  SynthParams synth = benchmark_synth_defaults();
  // [paths]
  std::string data_dir;
  std::string checkpoint;
  std::string report_dir;

  static SynthParams benchmark_synth_defaults() {
    SynthParams p;
    p.frames = 8;
    p.occluders_min = 1;
    p.occluders_max = 2;
    p.occluder_min_frames = 3;
    p.occluder_max_frames = 6;
    return p;
  }

  ModelConfig model_config() const;
  TrainOptions train_options() const;

  // Canonical dump of the scenario-determining sections ([grid] and [data]);
  // the manifest hash is computed over this.
  std::string canonical_generation_dump() const;
  std::string config_hash() const;  // FNV-1a 64 over the canonical dump, hex
};

RunConfig parse_config_text(const std::string& text);
RunConfig load_config(const std::string& path);
std::string default_config_text();

BEVMEM_NS_END
