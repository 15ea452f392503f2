#pragma once

#include <array>
#include <optional>
#include <set>

#include "bevmem/checkpoint.hpp"

BEVMEM_NS_BEGIN

struct SequenceData {
  Scenario scenario;
  std::vector<ObservationFrame> frames;
};

struct Dataset {
  GridSpec grid;
  std::vector<SequenceData> sequences;

  bool empty() const { return sequences.empty(); }
};

// Rendering is deterministic per (scenario content, seed, sigma).
Dataset build_dataset(const std::vector<Scenario>& scenarios, std::uint64_t render_seed,
                      double sigma);

struct TrainOptions {
  AdamW::Options adam;
  FocalOptions focal;
  int stage1_epochs = 1;
  int stage2_epochs = 1;
  int stage1_frames_per_scenario = 1;
  std::uint64_t seed = 1;
  bool deterministic = true;
};

struct EpochLog {
  int stage = 0;
  int epoch = 0;
  double mean_loss = 0.0;
  double wall_s = 0.0;
};

// One line per epoch. In deterministic mode wall_s is written as 0 so that
// repeated runs produce byte-identical logs.
std::string train_log_to_jsonl(const std::vector<EpochLog>& log, bool deterministic);

// Stage 1: independent frames; the working memory is repeat-initialized from
// the frame's own BEV feature, so the fusion block trains against degenerate
// memory. Appends one EpochLog entry per epoch.
void train_stage1(const Dataset& data, ModelParams& params, const TrainOptions& opt,
                  std::vector<EpochLog>* log);

// Stage 2: streams both halves of each randomly split sequence; per frame:
// forward, loss, backward, optimizer step, then advance the detached memory.
// Captures a parameter snapshot at 50% of the total stage-2 step budget when
// midpoint_out is given.
void train_stage2(const Dataset& data, ModelParams& params, const TrainOptions& opt,
                  std::vector<EpochLog>* log, ModelParams* midpoint_out = nullptr);

struct Metrics {
  std::array<double, 3> class_iou{0.0, 0.0, 0.0};  // ped_crossing, divider, boundary
  double mean_iou = 0.0;
  double occluded_iou = 0.0;
  std::int64_t frames = 0;
  std::int64_t qualifying_frames = 0;
};

struct EvalOptions {
  int occl_window = 4;  // fixed across variants so scores are comparable
  int min_qualifying_cells = 10;
  bool parallel_sequences = true;
};

struct SequenceMetrics {
  int scenario_index = 0;
  Metrics m;
};

// Cells hidden at frame t whose world point was visible (in view and not
// occluded) in at least one of the previous `window` frames, found by
// mapping each cell through the egomotion chain with nearest-cell lookup.
std::vector<std::uint8_t> occluded_recoverable_mask(const Scenario& scenario,
                                                    const std::vector<ObservationFrame>& frames,
                                                    int t, int window);

struct EvalReport {
  Metrics overall;
  std::vector<SequenceMetrics> per_sequence;
};

// Confusion counts indexed [gt][pred]; exposed so the metric arithmetic can
// be checked directly against brute-force counting.
using ConfusionCounts = std::array<std::array<std::int64_t, kNumClasses>, kNumClasses>;
Metrics metrics_from_confusion(const ConfusionCounts& overall, const ConfusionCounts& occluded,
                               std::int64_t frames, std::int64_t qualifying_frames);

// Streaming evaluation: argmax over logits per cell, IoU from confusion
// counts; occluded-region IoU over cells hidden now but visible in at least
// one of the previous occl_window frames. Throws DataError on empty input.
EvalReport evaluate(const Dataset& data, const ModelParams& params, const EvalOptions& opt = {});

std::string eval_report_to_json(const EvalReport& r);

// Ablation harness -------------------------------------------------------

extern const std::vector<std::string> kAblationVariants;

// Throws ConfigError (listing valid names) on an unknown variant.
ModelConfig apply_variant(const ModelConfig& base, const std::string& variant);

struct AblationRun {
  std::string variant;
  std::uint64_t seed = 0;
  Metrics final_m;
  std::optional<Metrics> midpoint;     // after 50% of the stage-2 budget
  std::optional<Metrics> stage1_only;  // before stage 2
};

struct DirectionalCheck {
  std::string name;
  bool applicable = false;
  bool pass = false;
  double value = 0.0;      // achieved gap in IoU points (0.01 IoU = 1 point)
  double threshold = 0.0;  // required gap in points
};

struct AblationReport {
  std::vector<std::string> variants;
  std::vector<std::uint64_t> seeds;
  std::vector<AblationRun> runs;
  std::vector<DirectionalCheck> checks;

  double mean_occluded(const std::string& variant) const;
  double mean_iou(const std::string& variant) const;
};

struct AblationOptions {
  std::set<std::string> capture_midpoint;     // variants to snapshot at 50% stage 2
  std::set<std::string> capture_stage1;       // variants to evaluate after stage 1
};

// Trains every variant with identical (paired) seeds and budgets on the same
// data, evaluates each, and fills in the directional checks that apply.
AblationReport run_ablation(const Dataset& train_data, const Dataset& eval_data,
                            const ModelConfig& base, const TrainOptions& topt,
                            const std::vector<std::string>& variants,
                            const std::vector<std::uint64_t>& seeds,
                            const AblationOptions& aopt = {});

std::string ablation_report_to_json(const AblationReport& r);

BEVMEM_NS_END
