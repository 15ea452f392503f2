#include "bevmem/train.hpp"

#include <algorithm>
#include <chrono>

#include "json.hpp"

BEVMEM_NS_BEGIN

using nlohmann::json;

Dataset build_dataset(const std::vector<Scenario>& scenarios, std::uint64_t render_seed,
                      double sigma) {
  if (scenarios.empty()) throw DataError("build_dataset: no scenarios");
  Dataset d;
  d.grid = scenarios.front().grid;
  d.sequences.resize(scenarios.size());
  parallel_for(static_cast<std::int64_t>(scenarios.size()), [&](std::int64_t b, std::int64_t e) {
    for (std::int64_t i = b; i < e; ++i) {
      const Scenario& s = scenarios[static_cast<std::size_t>(i)];
      if (!(s.grid == d.grid)) throw DataError("build_dataset: mixed grid specs");
      d.sequences[static_cast<std::size_t>(i)] = {
          s, render_scenario(s, mix_seed(render_seed, static_cast<std::uint64_t>(i)), sigma)};
    }
  });
  return d;
}

std::string train_log_to_jsonl(const std::vector<EpochLog>& log, bool deterministic) {
  std::string out;
  for (const EpochLog& e : log) {
    json j;
    j["stage"] = e.stage;
    j["epoch"] = e.epoch;
    j["mean_loss"] = e.mean_loss;
    j["wall_s"] = deterministic ? 0.0 : e.wall_s;
    out += j.dump();
    out += "\n";
  }
  return out;
}

namespace {

double now_s() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

double train_one_frame(ModelParams& params, const ObservationFrame& frame,
                       const WorkingMemory* wm, const std::vector<Param*>& plist, AdamW& adam,
                       const FocalOptions& focal, Tensor* fused_out) {
  Tape tape;
  const ForwardResult res = forward_frame(tape, frame, wm, params);
  const Tape::Id loss = focal_loss(tape, res.logits, frame.gt_labels, focal);
  const double loss_v = static_cast<double>(tape.val(loss).v[0]);
  if (!std::isfinite(loss_v)) throw std::runtime_error("training diverged: non-finite loss");
  zero_grad(plist);
  tape.backward(loss);
  adam.step();
  if (fused_out) *fused_out = tape.val(res.fused);
  return loss_v;
}

}  // namespace

void train_stage1(const Dataset& data, ModelParams& params, const TrainOptions& opt,
                  std::vector<EpochLog>* log) {
  if (data.empty()) throw DataError("train_stage1: empty dataset");
  if (!(data.grid == params.cfg.grid)) throw ConfigError("train_stage1: dataset grid mismatch");
  std::vector<Param*> plist = params.all();
  AdamW adam(plist, opt.adam);

  for (int epoch = 0; epoch < opt.stage1_epochs; ++epoch) {
    const double t0 = now_s();
    Rng rng(mix_seed(opt.seed, 0x53316570ULL + static_cast<std::uint64_t>(epoch)));
    double loss_sum = 0.0;
    std::int64_t steps = 0;
    for (const SequenceData& seq : data.sequences) {
      const int n = static_cast<int>(seq.frames.size());
      for (int rep = 0; rep < opt.stage1_frames_per_scenario; ++rep) {
        const int t = static_cast<int>(rng.uniform_int(0, n - 1));
        const ObservationFrame& frame = seq.frames[static_cast<std::size_t>(t)];
        WorkingMemory wm;
        if (params.cfg.temporal)
          wm = WorkingMemory::init(stem_forward_value(params, frame.observation),
                                   params.cfg.t_wm, params.cfg.grid);
        loss_sum += train_one_frame(params, frame, params.cfg.temporal ? &wm : nullptr, plist,
                                    adam, opt.focal, nullptr);
        ++steps;
      }
    }
    if (log)
      log->push_back({1, epoch, steps ? loss_sum / static_cast<double>(steps) : 0.0,
                      now_s() - t0});
  }
}

namespace {

struct Stage2Runner {
  ModelParams& params;
  const TrainOptions& opt;
  std::vector<Param*> plist;
  AdamW adam;
  std::int64_t total_steps = 0;
  std::int64_t step = 0;
  ModelParams* midpoint_out = nullptr;

  Stage2Runner(ModelParams& p, const TrainOptions& o)
      : params(p), opt(o), plist(p.all()), adam(plist, o.adam) {}

  // Streams frames [begin, end) of one sub-sequence; buffer and heatmap
  // start fresh and gradients never cross frame boundaries (entries are
  // detached values).
  double run_subsequence(const SequenceData& seq, int begin, int end) {
    const bool temporal = params.cfg.temporal;
    WorkingMemory wm;
    double loss_sum = 0.0;
    for (int t = begin; t < end; ++t) {
      const ObservationFrame& frame = seq.frames[static_cast<std::size_t>(t)];
      if (temporal && t == begin)
        wm = WorkingMemory::init(stem_forward_value(params, frame.observation),
                                 params.cfg.t_wm, params.cfg.grid);
      Tensor fused;
      loss_sum += train_one_frame(params, frame, temporal ? &wm : nullptr, plist, adam,
                                  opt.focal, temporal ? &fused : nullptr);
      if (temporal) {
        if (t == begin) wm.replace_initial(fused);
        if (t + 1 < end)
          wm.advance(fused, relative_transform(seq.scenario.trajectory[static_cast<std::size_t>(t)],
                                               seq.scenario.trajectory[static_cast<std::size_t>(t) + 1]));
      }
      ++step;
      if (midpoint_out && step == (total_steps + 1) / 2) *midpoint_out = params;
    }
    return loss_sum;
  }
};

}  // namespace

void train_stage2(const Dataset& data, ModelParams& params, const TrainOptions& opt,
                  std::vector<EpochLog>* log, ModelParams* midpoint_out) {
  if (data.empty()) throw DataError("train_stage2: empty dataset");
  if (!(data.grid == params.cfg.grid)) throw ConfigError("train_stage2: dataset grid mismatch");

  Stage2Runner runner(params, opt);
  runner.midpoint_out = midpoint_out;
  for (const SequenceData& seq : data.sequences)
    runner.total_steps += static_cast<std::int64_t>(seq.frames.size());
  runner.total_steps *= opt.stage2_epochs;

  for (int epoch = 0; epoch < opt.stage2_epochs; ++epoch) {
    const double t0 = now_s();
    double loss_sum = 0.0;
    std::int64_t steps_before = runner.step;
    for (std::size_t si = 0; si < data.sequences.size(); ++si) {
      const SequenceData& seq = data.sequences[si];
      const int n = static_cast<int>(seq.frames.size());
      if (n >= 4) {
        const auto [first_len, second_len] =
            split_sequence(n, mix_seed(opt.seed, 0x53322000ULL + 1000003ULL * epoch + si));
        loss_sum += runner.run_subsequence(seq, 0, first_len);
        loss_sum += runner.run_subsequence(seq, first_len, first_len + second_len);
      } else {
        loss_sum += runner.run_subsequence(seq, 0, n);
      }
    }
    const std::int64_t steps = runner.step - steps_before;
    if (log)
      log->push_back({2, epoch, steps ? loss_sum / static_cast<double>(steps) : 0.0,
                      now_s() - t0});
  }
  if (midpoint_out && runner.total_steps == 0) *midpoint_out = params;
}

namespace {

struct Confusion {
  std::array<std::array<std::int64_t, kNumClasses>, kNumClasses> c{};  // [gt][pred]

  void add(const Confusion& o) {
    for (int i = 0; i < kNumClasses; ++i)
      for (int j = 0; j < kNumClasses; ++j) c[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] += o.c[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  }
};

// IoU per foreground class; classes absent from both gt and prediction are
// excluded from the mean.
void fill_iou(const Confusion& conf, std::array<double, 3>& class_iou, double& mean) {
  double sum = 0.0;
  int defined = 0;
  for (int cls = 1; cls < kNumClasses; ++cls) {
    std::int64_t row = 0, col = 0;
    for (int k = 0; k < kNumClasses; ++k) {
      row += conf.c[static_cast<std::size_t>(cls)][static_cast<std::size_t>(k)];
      col += conf.c[static_cast<std::size_t>(k)][static_cast<std::size_t>(cls)];
    }
    const std::int64_t tp = conf.c[static_cast<std::size_t>(cls)][static_cast<std::size_t>(cls)];
    const std::int64_t uni = row + col - tp;
    if (uni > 0) {
      class_iou[static_cast<std::size_t>(cls - 1)] = static_cast<double>(tp) / static_cast<double>(uni);
      sum += class_iou[static_cast<std::size_t>(cls - 1)];
      ++defined;
    } else {
      class_iou[static_cast<std::size_t>(cls - 1)] = 0.0;
    }
  }
  mean = defined ? sum / defined : 0.0;
}

struct SeqEvalAccum {
  Confusion overall;
  Confusion occluded;
  std::int64_t frames = 0;
  std::int64_t qualifying_frames = 0;
};

}  // namespace

std::vector<std::uint8_t> occluded_recoverable_mask(const Scenario& scenario,
                                                    const std::vector<ObservationFrame>& frames,
                                                    int t, int window) {
  const GridSpec& spec = scenario.grid;
  const int H = spec.h_cells, W = spec.w_cells;
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(H) * W, 0);
  const ObservationFrame& now = frames[static_cast<std::size_t>(t)];
  for (int k = 1; k <= window && k <= t; ++k) {
    const Pose2 cur_to_prev = inverse(relative_transform(
        scenario.trajectory[static_cast<std::size_t>(t - k)],
        scenario.trajectory[static_cast<std::size_t>(t)]));
    const ObservationFrame& past = frames[static_cast<std::size_t>(t - k)];
    for (int i = 0; i < H; ++i) {
      for (int j = 0; j < W; ++j) {
        const std::size_t idx = static_cast<std::size_t>(i) * W + j;
        if (mask[idx] || now.visibility[idx]) continue;
        const Point2 prev_pt = apply(cur_to_prev, spec.grid_to_ego(i, j));
        const Point2 ij = spec.ego_to_grid_ij(prev_pt);
        const int si = static_cast<int>(std::lround(ij.x));
        const int sj = static_cast<int>(std::lround(ij.y));
        if (si < 0 || si >= H || sj < 0 || sj >= W) continue;
        if (past.visibility[static_cast<std::size_t>(si) * W + sj]) mask[idx] = 1;
      }
    }
  }
  return mask;
}

namespace {

SeqEvalAccum eval_sequence(const SequenceData& seq, ModelParams& params, const EvalOptions& opt) {
  const ModelConfig& cfg = params.cfg;
  const int HW = cfg.grid.h_cells * cfg.grid.w_cells;
  SeqEvalAccum acc;
  WorkingMemory wm;
  const int n = static_cast<int>(seq.frames.size());
  for (int t = 0; t < n; ++t) {
    const ObservationFrame& frame = seq.frames[static_cast<std::size_t>(t)];
    if (cfg.temporal && t == 0)
      wm = WorkingMemory::init(stem_forward_value(params, frame.observation), cfg.t_wm, cfg.grid);
    Tape tape(false);
    const ForwardResult res = forward_frame(tape, frame, cfg.temporal ? &wm : nullptr, params);
    const Tensor& logits = tape.val(res.logits);

    // qualifying cells: hidden now, world point seen in a recent frame
    const std::vector<std::uint8_t> qualifying =
        occluded_recoverable_mask(seq.scenario, seq.frames, t, opt.occl_window);
    std::int64_t qual_count = 0;
    for (const std::uint8_t q : qualifying) qual_count += q;
    const bool count_occluded = qual_count >= opt.min_qualifying_cells;
    if (count_occluded) ++acc.qualifying_frames;

    for (int p = 0; p < HW; ++p) {
      int best = 0;
      real best_v = logits.v[static_cast<std::size_t>(p)];
      for (int c = 1; c < kNumClasses; ++c) {
        const real v = logits.v[static_cast<std::size_t>(c) * HW + p];
        if (v > best_v) {
          best_v = v;
          best = c;
        }
      }
      const int gt = frame.gt_labels[static_cast<std::size_t>(p)];
      ++acc.overall.c[static_cast<std::size_t>(gt)][static_cast<std::size_t>(best)];
      if (count_occluded && qualifying[static_cast<std::size_t>(p)])
        ++acc.occluded.c[static_cast<std::size_t>(gt)][static_cast<std::size_t>(best)];
    }
    ++acc.frames;

    if (cfg.temporal && t + 1 < n)
      wm.advance(tape.val(res.fused),
                 relative_transform(seq.scenario.trajectory[static_cast<std::size_t>(t)],
                                    seq.scenario.trajectory[static_cast<std::size_t>(t) + 1]));
  }
  return acc;
}

Metrics metrics_from(const SeqEvalAccum& acc) {
  return metrics_from_confusion(acc.overall.c, acc.occluded.c, acc.frames,
                                acc.qualifying_frames);
}

json metrics_to_json(const Metrics& m) {
  return json{{"iou_ped_crossing", m.class_iou[0]},
              {"iou_divider", m.class_iou[1]},
              {"iou_boundary", m.class_iou[2]},
              {"mean_iou", m.mean_iou},
              {"occluded_iou", m.occluded_iou},
              {"frames", m.frames},
              {"qualifying_frames", m.qualifying_frames}};
}

}  // namespace

Metrics metrics_from_confusion(const ConfusionCounts& overall, const ConfusionCounts& occluded,
                               std::int64_t frames, std::int64_t qualifying_frames) {
  Metrics m;
  Confusion a, b;
  a.c = overall;
  b.c = occluded;
  fill_iou(a, m.class_iou, m.mean_iou);
  std::array<double, 3> occ_class{};
  fill_iou(b, occ_class, m.occluded_iou);
  m.frames = frames;
  m.qualifying_frames = qualifying_frames;
  return m;
}

EvalReport evaluate(const Dataset& data, const ModelParams& params, const EvalOptions& opt) {
  if (data.empty()) throw DataError("evaluate: empty dataset");
  if (!(data.grid == params.cfg.grid)) throw ConfigError("evaluate: dataset grid mismatch");

  // forward_frame takes a mutable reference for tape binding; evaluation
  // never writes through it, so one shared copy serves all worker threads
  ModelParams local = params;
  std::vector<SeqEvalAccum> accums(data.sequences.size());
  const auto work = [&](std::int64_t b, std::int64_t e) {
    for (std::int64_t i = b; i < e; ++i)
      accums[static_cast<std::size_t>(i)] =
          eval_sequence(data.sequences[static_cast<std::size_t>(i)], local, opt);
  };
  if (opt.parallel_sequences)
    parallel_for(static_cast<std::int64_t>(data.sequences.size()), work);
  else
    work(0, static_cast<std::int64_t>(data.sequences.size()));

  EvalReport report;
  SeqEvalAccum total;
  for (std::size_t i = 0; i < accums.size(); ++i) {
    total.overall.add(accums[i].overall);
    total.occluded.add(accums[i].occluded);
    total.frames += accums[i].frames;
    total.qualifying_frames += accums[i].qualifying_frames;
    report.per_sequence.push_back({static_cast<int>(i), metrics_from(accums[i])});
  }
  report.overall = metrics_from(total);
  return report;
}

std::string eval_report_to_json(const EvalReport& r) {
  json j;
  j["version"] = 1;
  j["metrics"] = metrics_to_json(r.overall);
  json seqs = json::array();
  for (const SequenceMetrics& s : r.per_sequence) {
    json e = metrics_to_json(s.m);
    e["scenario"] = s.scenario_index;
    seqs.push_back(e);
  }
  j["per_sequence"] = seqs;
  return j.dump(2) + "\n";
}

// Ablation harness -------------------------------------------------------

const std::vector<std::string> kAblationVariants = {
    "full",   "no_temporal", "twm1",  "twm2",  "twm4", "twm6",
    "twm8",   "heatmap_off", "dil11", "dil22", "dil33"};

ModelConfig apply_variant(const ModelConfig& base, const std::string& variant) {
  ModelConfig cfg = base;
  if (variant == "full" || variant == "twm4" || variant == "dil22") {
    if (variant == "twm4") cfg.t_wm = 4;
    if (variant == "dil22") cfg.dil_h = cfg.dil_w = 2;
    return cfg;
  }
  if (variant == "no_temporal") {
    cfg.temporal = false;
    return cfg;
  }
  if (variant == "heatmap_off") {
    cfg.use_heatmap = false;
    return cfg;
  }
  if (variant == "twm1" || variant == "twm2" || variant == "twm6" || variant == "twm8") {
    cfg.t_wm = variant[3] - '0';
    return cfg;
  }
  if (variant == "dil11") {
    cfg.dil_h = cfg.dil_w = 1;
    return cfg;
  }
  if (variant == "dil33") {
    cfg.dil_h = cfg.dil_w = 3;
    return cfg;
  }
  std::string valid;
  for (const std::string& v : kAblationVariants) valid += (valid.empty() ? "" : ", ") + v;
  throw ConfigError("unknown variant '" + variant + "'; valid names: " + valid);
}

double AblationReport::mean_occluded(const std::string& variant) const {
  double sum = 0.0;
  int n = 0;
  for (const AblationRun& r : runs)
    if (r.variant == variant) {
      sum += r.final_m.occluded_iou;
      ++n;
    }
  return n ? sum / n : 0.0;
}

double AblationReport::mean_iou(const std::string& variant) const {
  double sum = 0.0;
  int n = 0;
  for (const AblationRun& r : runs)
    if (r.variant == variant) {
      sum += r.final_m.mean_iou;
      ++n;
    }
  return n ? sum / n : 0.0;
}

AblationReport run_ablation(const Dataset& train_data, const Dataset& eval_data,
                            const ModelConfig& base, const TrainOptions& topt,
                            const std::vector<std::string>& variants,
                            const std::vector<std::uint64_t>& seeds,
                            const AblationOptions& aopt) {
  AblationReport report;
  report.variants = variants;
  report.seeds = seeds;

  for (const std::string& variant : variants) {
    const ModelConfig cfg = apply_variant(base, variant);
    for (std::uint64_t seed : seeds) {
      ModelParams params = init_model_params(seed, cfg);
      TrainOptions opt = topt;
      opt.seed = seed;

      AblationRun run;
      run.variant = variant;
      run.seed = seed;

      train_stage1(train_data, params, opt, nullptr);
      if (aopt.capture_stage1.count(variant))
        run.stage1_only = evaluate(eval_data, params).overall;

      ModelParams midpoint;
      const bool want_mid = aopt.capture_midpoint.count(variant) > 0;
      train_stage2(train_data, params, opt, nullptr, want_mid ? &midpoint : nullptr);
      if (want_mid) run.midpoint = evaluate(eval_data, midpoint).overall;

      run.final_m = evaluate(eval_data, params).overall;
      report.runs.push_back(std::move(run));
    }
  }

  // Directional checks in IoU points (0.01 IoU = 1 point); mirrors the
  // component/capacity/heatmap orderings the ablation tables establish.
  const auto has = [&](const std::string& v) {
    return std::find(variants.begin(), variants.end(), v) != variants.end();
  };
  const std::string full_name = has("full") ? "full" : (has("twm4") ? "twm4" : "");
  const auto occ_pts = [&](const std::string& v) { return 100.0 * report.mean_occluded(v); };

  const auto add_check = [&](const std::string& name, bool applicable, double gap,
                             double threshold) {
    DirectionalCheck c;
    c.name = name;
    c.applicable = applicable;
    c.value = applicable ? gap : 0.0;
    c.threshold = threshold;
    c.pass = applicable && gap >= threshold;
    report.checks.push_back(c);
  };

  add_check("full_vs_no_temporal_ge_5pt", !full_name.empty() && has("no_temporal"),
            !full_name.empty() && has("no_temporal") ? occ_pts(full_name) - occ_pts("no_temporal")
                                                     : 0.0,
            5.0);
  add_check("twm1_vs_no_temporal_ge_1pt", has("twm1") && has("no_temporal"),
            has("twm1") && has("no_temporal") ? occ_pts("twm1") - occ_pts("no_temporal") : 0.0,
            1.0);
  add_check("twm4_vs_twm1_ge_1pt", !full_name.empty() && has("twm1"),
            !full_name.empty() && has("twm1") ? occ_pts(full_name) - occ_pts("twm1") : 0.0, 1.0);
  add_check("heatmap_on_vs_off_ge_1pt", !full_name.empty() && has("heatmap_off"),
            !full_name.empty() && has("heatmap_off")
                ? occ_pts(full_name) - occ_pts("heatmap_off")
                : 0.0,
            1.0);
  return report;
}

std::string ablation_report_to_json(const AblationReport& r) {
  json j;
  j["version"] = 1;
  j["seeds"] = r.seeds;
  j["paired_seeds"] = true;  // every variant trains with the same seed list
  j["variants"] = r.variants;
  json runs = json::array();
  for (const AblationRun& run : r.runs) {
    json e;
    e["variant"] = run.variant;
    e["seed"] = run.seed;
    e["metrics"] = metrics_to_json(run.final_m);
    if (run.midpoint) e["midpoint_metrics"] = metrics_to_json(*run.midpoint);
    if (run.stage1_only) e["stage1_metrics"] = metrics_to_json(*run.stage1_only);
    runs.push_back(e);
  }
  j["runs"] = runs;
  json agg = json::object();
  for (const std::string& v : r.variants)
    agg[v] = {{"mean_occluded_iou", r.mean_occluded(v)}, {"mean_iou", r.mean_iou(v)}};
  j["aggregate"] = agg;
  json checks = json::array();
  for (const DirectionalCheck& c : r.checks)
    checks.push_back({{"name", c.name},
                      {"applicable", c.applicable},
                      {"pass", c.pass},
                      {"gap_points", c.value},
                      {"threshold_points", c.threshold}});
  j["checks"] = checks;
  return j.dump(2) + "\n";
}

BEVMEM_NS_END
