#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "bevmem/train.hpp"
#include "oracles.hpp"

using namespace bevmem;

namespace {

// micro setup: everything small enough that a full two-stage run takes
// well under a second
ModelConfig micro_config() {
  ModelConfig cfg;
  cfg.grid = {8, 16, 1.0};
  cfg.channels = 8;
  cfg.t_wm = 2;
  cfg.c_h = 4;
  return cfg;
}

SynthParams micro_synth() {
  SynthParams p;
  p.frames = 6;
  p.occluders_min = 1;
  p.occluders_max = 1;
  p.occluder_min_frames = 2;
  p.occluder_max_frames = 3;
  p.corridor_half_width_min = 4.0;
  p.corridor_half_width_max = 6.0;
  return p;
}

Dataset micro_dataset(std::uint64_t seed, int count, const ModelConfig& cfg) {
  std::vector<Scenario> scns;
  for (int i = 0; i < count; ++i)
    scns.push_back(gen_scenario(mix_seed(seed, static_cast<std::uint64_t>(i)), micro_synth(),
                                cfg.grid));
  return build_dataset(scns, mix_seed(seed, 999), 0.2);
}

TrainOptions micro_options(std::uint64_t seed) {
  TrainOptions t;
  t.adam.lr = 2e-3;
  t.stage1_epochs = 1;
  t.stage2_epochs = 1;
  t.stage1_frames_per_scenario = 2;
  t.seed = seed;
  return t;
}

double frame_loss(ModelParams& params, const SequenceData& seq, int t) {
  const ObservationFrame& frame = seq.frames[static_cast<std::size_t>(t)];
  WorkingMemory wm;
  if (params.cfg.temporal)
    wm = WorkingMemory::init(stem_forward_value(params, frame.observation), params.cfg.t_wm,
                             params.cfg.grid);
  Tape tape;
  const ForwardResult res =
      forward_frame(tape, frame, params.cfg.temporal ? &wm : nullptr, params);
  const auto loss = focal_loss(tape, res.logits, frame.gt_labels, FocalOptions{});
  return static_cast<double>(tape.val(loss).v[0]);
}

}  // namespace

TEST_CASE("forward_frame shapes and preset channel arithmetic") {
  ModelConfig cfg = micro_config();
  cfg.grid = {32, 64, 1.0};
  cfg.channels = 64;
  cfg.t_wm = 4;
  cfg.c_h = 32;
  CHECK(cfg.fusion_config().mem_in_channels() == 4 * 64 + 32 + 64);

  ModelParams params = init_model_params(1, cfg);
  const Dataset data = micro_dataset(3, 1, cfg);
  const ObservationFrame& frame = data.sequences[0].frames[0];
  WorkingMemory wm = WorkingMemory::init(stem_forward_value(params, frame.observation), 4,
                                         cfg.grid);
  Tape tape(false);
  const ForwardResult res = forward_frame(tape, frame, &wm, params);
  CHECK(tape.val(res.logits).shape == std::vector<int>{4, 32, 64});
  CHECK(tape.val(res.fused).shape == std::vector<int>{64, 32, 64});
}

TEST_CASE("single-frame bypass uses stem and head only") {
  ModelConfig cfg = micro_config();
  cfg.temporal = false;
  ModelParams params = init_model_params(2, cfg);
  const Dataset data = micro_dataset(4, 1, cfg);
  Tape tape;
  const ForwardResult res = forward_frame(tape, data.sequences[0].frames[0], nullptr, params);
  CHECK(tape.val(res.logits).c() == 4);
  // inventory: no fusion tensors in the bypass configuration
  for (Param* p : params.all()) CHECK(p->name.rfind("conv_", 0) != 0);
}

TEST_CASE("focal loss: perfect one-hot logits give near-zero loss") {
  const int hw = 12;
  Tensor logits = Tensor::fmap(4, 3, 4);
  std::vector<std::uint8_t> labels(hw);
  Rng rng(91);
  for (int p = 0; p < hw; ++p) {
    labels[static_cast<std::size_t>(p)] = static_cast<std::uint8_t>(rng.uniform_int(0, 3));
    for (int c = 0; c < 4; ++c)
      logits.v[static_cast<std::size_t>(c) * hw + p] =
          c == labels[static_cast<std::size_t>(p)] ? real(12) : real(-12);
  }
  Tape tape;
  const auto loss = tape.focal_loss(tape.leaf(logits), labels, real(2), real(0.25), real(5));
  CHECK(static_cast<double>(tape.val(loss).v[0]) < 1e-3);
}

TEST_CASE("focal loss: uniform logits match the closed form") {
  const int hw = 6;
  Tensor logits = Tensor::fmap(4, 2, 3);  // all zeros -> uniform over 4 classes
  std::vector<std::uint8_t> labels(hw, 1);
  Tape tape;
  const auto loss = tape.focal_loss(tape.leaf(logits), labels, real(2), real(0.25), real(1));
  const double per_cell = 0.25 * std::pow(1.0 - 0.25, 2.0) * std::log(4.0);
  CHECK(static_cast<double>(tape.val(loss).v[0]) == doctest::Approx(per_cell).epsilon(1e-5));
}

TEST_CASE("focal loss with gamma 0 and alpha 1 is scaled cross-entropy") {
  Rng rng(92);
  const int hw = 20;
  Tensor logits = Tensor::fmap(4, 4, 5);
  for (real& v : logits.v) v = static_cast<real>(rng.uniform(-2, 2));
  std::vector<std::uint8_t> labels(hw);
  for (auto& l : labels) l = static_cast<std::uint8_t>(rng.uniform_int(0, 3));

  Tape tape;
  const auto loss =
      tape.focal_loss(tape.leaf(logits), labels, real(0), real(1), real(5));
  // reference cross-entropy
  double want = 0;
  for (int p = 0; p < hw; ++p) {
    double lse = 0, zmax = -1e30;
    for (int c = 0; c < 4; ++c)
      zmax = std::max(zmax, static_cast<double>(logits.v[static_cast<std::size_t>(c) * hw + p]));
    for (int c = 0; c < 4; ++c)
      lse += std::exp(static_cast<double>(logits.v[static_cast<std::size_t>(c) * hw + p]) - zmax);
    lse = zmax + std::log(lse);
    want -= static_cast<double>(
                logits.v[static_cast<std::size_t>(labels[static_cast<std::size_t>(p)]) * hw + p]) -
            lse;
  }
  want = 5.0 * want / hw;
  CHECK(static_cast<double>(tape.val(loss).v[0]) == doctest::Approx(want).epsilon(1e-5));
}

TEST_CASE("stage 1 reduces the loss and is bit-deterministic per seed") {
  const ModelConfig cfg = micro_config();
  const Dataset data = micro_dataset(7, 6, cfg);
  const TrainOptions opt = micro_options(11);

  ModelParams a = init_model_params(11, cfg);
  const double before = frame_loss(a, data.sequences[0], 0);
  std::vector<EpochLog> log;
  TrainOptions opt3 = opt;
  opt3.stage1_epochs = 3;
  train_stage1(data, a, opt3, &log);
  CHECK(log.size() == 3);
  CHECK(log.back().mean_loss < log.front().mean_loss);
  const double after = frame_loss(a, data.sequences[0], 0);
  CHECK(after < before);

  ModelParams b = init_model_params(11, cfg);
  train_stage1(data, b, opt3, nullptr);
  auto pa = a.all();
  auto pb = b.all();
  for (std::size_t i = 0; i < pa.size(); ++i)
    for (std::size_t j = 0; j < pa[i]->value.v.size(); ++j)
      CHECK(pa[i]->value.v[j] == pb[i]->value.v[j]);
}

TEST_CASE("stage 1 is a valid warm start for stage 2") {
  const ModelConfig cfg = micro_config();
  const Dataset data = micro_dataset(13, 6, cfg);

  int wins = 0;
  for (std::uint64_t seed : {21, 22, 23}) {
    ModelParams warm = init_model_params(seed, cfg);
    train_stage1(data, warm, micro_options(seed), nullptr);
    ModelParams cold = init_model_params(seed + 100, cfg);
    double warm_loss = 0, cold_loss = 0;
    for (int s = 0; s < 3; ++s) {
      warm_loss += frame_loss(warm, data.sequences[static_cast<std::size_t>(s)], 0);
      cold_loss += frame_loss(cold, data.sequences[static_cast<std::size_t>(s)], 0);
    }
    if (warm_loss < cold_loss) ++wins;
  }
  CHECK(wins == 3);
}

TEST_CASE("stage 2 streams with detached memory: no gradient into frame t-1") {
  const ModelConfig cfg = micro_config();
  const Dataset data = micro_dataset(17, 2, cfg);
  ModelParams params = init_model_params(31, cfg);

  // run frame 0 manually, keep its tape, then check that frame 1's backward
  // leaves frame 0's parameter gradients untouched through the buffer
  const SequenceData& seq = data.sequences[0];
  WorkingMemory wm = WorkingMemory::init(
      stem_forward_value(params, seq.frames[0].observation), cfg.t_wm, cfg.grid);
  Tape t0;
  const ForwardResult r0 = forward_frame(t0, seq.frames[0], &wm, params);
  wm.replace_initial(t0.val(r0.fused));
  wm.advance(t0.val(r0.fused),
             relative_transform(seq.scenario.trajectory[0], seq.scenario.trajectory[1]));

  // frame 1 loss gradient w.r.t. params flows only through frame 1's pass;
  // compare against a run where frame 0 used different parameters: if any
  // gradient leaked through the buffer, grads would differ only via values,
  // so instead assert the exact-zero contract directly on a buffer-only loss
  auto plist = params.all();
  zero_grad(plist);
  Tape t1;
  const auto mem_leaf = t1.leaf(wm.stacked());
  const auto loss = t1.sum(t1.mul(mem_leaf, t1.leaf(Tensor::full(t1.val(mem_leaf).shape, real(1)))));
  t1.backward(loss);
  for (Param* p : plist)
    for (real g : p->grad.v) CHECK(g == real(0));
}

TEST_CASE("stage 2 runs, logs, and captures the midpoint snapshot") {
  const ModelConfig cfg = micro_config();
  const Dataset data = micro_dataset(19, 4, cfg);
  ModelParams params = init_model_params(41, cfg);
  const TrainOptions opt = micro_options(41);
  train_stage1(data, params, opt, nullptr);

  ModelParams midpoint;
  std::vector<EpochLog> log;
  train_stage2(data, params, opt, &log, &midpoint);
  CHECK(log.size() == 1);
  CHECK(log[0].stage == 2);
  CHECK(std::isfinite(log[0].mean_loss));
  // midpoint captured and differs from the final parameters
  REQUIRE(!midpoint.all().empty());
  bool differs = false;
  auto pm = midpoint.all();
  auto pf = params.all();
  for (std::size_t i = 0; i < pm.size(); ++i)
    for (std::size_t j = 0; j < pm[i]->value.v.size(); ++j)
      if (pm[i]->value.v[j] != pf[i]->value.v[j]) differs = true;
  CHECK(differs);
}

TEST_CASE("streaming causality: future frames cannot affect current output") {
  const ModelConfig cfg = micro_config();
  Dataset data = micro_dataset(23, 1, cfg);
  ModelParams params = init_model_params(51, cfg);

  const auto predict_frame2 = [&](const Dataset& d) {
    const SequenceData& seq = d.sequences[0];
    WorkingMemory wm;
    Tensor out;
    for (int t = 0; t <= 2; ++t) {
      if (t == 0)
        wm = WorkingMemory::init(stem_forward_value(params, seq.frames[0].observation),
                                 cfg.t_wm, cfg.grid);
      Tape tape(false);
      const ForwardResult res = forward_frame(tape, seq.frames[static_cast<std::size_t>(t)],
                                              &wm, params);
      out = tape.val(res.logits);
      if (t == 0) wm.replace_initial(tape.val(res.fused));
      if (t < 2)
        wm.advance(tape.val(res.fused),
                   relative_transform(seq.scenario.trajectory[static_cast<std::size_t>(t)],
                                      seq.scenario.trajectory[static_cast<std::size_t>(t) + 1]));
    }
    return out;
  };

  const Tensor base = predict_frame2(data);
  // mutate every frame after t=2
  for (std::size_t t = 3; t < data.sequences[0].frames.size(); ++t)
    for (real& v : data.sequences[0].frames[t].observation.v) v += real(100);
  const Tensor mutated = predict_frame2(data);
  for (std::size_t i = 0; i < base.v.size(); ++i) CHECK(base.v[i] == mutated.v[i]);
}

TEST_CASE("metric arithmetic: extremes and the confusion-count oracle") {
  // predictions equal to labels give IoU 1 everywhere
  ConfusionCounts perfect{};
  for (int c = 0; c < 4; ++c) perfect[static_cast<std::size_t>(c)][static_cast<std::size_t>(c)] = 100;
  const Metrics mp = metrics_from_confusion(perfect, perfect, 10, 5);
  for (double v : mp.class_iou) CHECK(v == doctest::Approx(1.0));
  CHECK(mp.mean_iou == doctest::Approx(1.0));
  CHECK(mp.occluded_iou == doctest::Approx(1.0));

  // all-background predictions zero out every class IoU
  ConfusionCounts all_bg{};
  for (int g = 0; g < 4; ++g) all_bg[static_cast<std::size_t>(g)][0] = 50;
  const Metrics mb = metrics_from_confusion(all_bg, ConfusionCounts{}, 10, 0);
  for (double v : mb.class_iou) CHECK(v == doctest::Approx(0.0));
  CHECK(mb.mean_iou == doctest::Approx(0.0));

  // random confusions match the brute-force per-cell oracle exactly
  oracle::IouOracle ref;
  ConfusionCounts counts{};
  Rng rng(93);
  for (int i = 0; i < 5000; ++i) {
    const int gt = static_cast<int>(rng.uniform_int(0, 3));
    const int pred = rng.uniform() < 0.7 ? gt : static_cast<int>(rng.uniform_int(0, 3));
    ref.add(gt, pred);
    ++counts[static_cast<std::size_t>(gt)][static_cast<std::size_t>(pred)];
  }
  const Metrics mo = metrics_from_confusion(counts, counts, 1, 1);
  for (int cls = 1; cls < 4; ++cls)
    CHECK(mo.class_iou[static_cast<std::size_t>(cls - 1)] == ref.iou(cls));

  const ModelConfig cfg = micro_config();
  CHECK_THROWS_AS(evaluate(Dataset{cfg.grid, {}}, init_model_params(1, cfg)), DataError);
}

TEST_CASE("evaluate matches an independent per-cell recount") {
  const ModelConfig cfg = micro_config();
  const Dataset data = micro_dataset(29, 3, cfg);
  ModelParams params = init_model_params(71, cfg);
  train_stage1(data, params, micro_options(71), nullptr);

  const EvalReport got = evaluate(data, params);

  // independent recount: stream each sequence, accumulate confusion by hand
  ConfusionCounts overall{}, occluded{};
  std::int64_t frames = 0, qual_frames = 0;
  const int HW = cfg.grid.h_cells * cfg.grid.w_cells;
  for (const SequenceData& seq : data.sequences) {
    WorkingMemory wm;
    for (int t = 0; t < static_cast<int>(seq.frames.size()); ++t) {
      const ObservationFrame& fr = seq.frames[static_cast<std::size_t>(t)];
      if (t == 0)
        wm = WorkingMemory::init(stem_forward_value(params, fr.observation), cfg.t_wm, cfg.grid);
      Tape tape(false);
      const ForwardResult res = forward_frame(tape, fr, &wm, params);
      const Tensor& logits = tape.val(res.logits);
      const auto qual = occluded_recoverable_mask(seq.scenario, seq.frames, t, 4);
      std::int64_t nq = 0;
      for (auto q : qual) nq += q;
      const bool count_occ = nq >= 10;
      if (count_occ) ++qual_frames;
      for (int p = 0; p < HW; ++p) {
        int best = 0;
        for (int c = 1; c < 4; ++c)
          if (logits.v[static_cast<std::size_t>(c) * HW + p] >
              logits.v[static_cast<std::size_t>(best) * HW + p])
            best = c;
        ++overall[fr.gt_labels[static_cast<std::size_t>(p)]][static_cast<std::size_t>(best)];
        if (count_occ && qual[static_cast<std::size_t>(p)])
          ++occluded[fr.gt_labels[static_cast<std::size_t>(p)]][static_cast<std::size_t>(best)];
      }
      ++frames;
      if (t + 1 < static_cast<int>(seq.frames.size()))
        wm.advance(tape.val(res.fused),
                   relative_transform(seq.scenario.trajectory[static_cast<std::size_t>(t)],
                                      seq.scenario.trajectory[static_cast<std::size_t>(t) + 1]));
    }
  }
  const Metrics want = metrics_from_confusion(overall, occluded, frames, qual_frames);
  CHECK(got.overall.mean_iou == want.mean_iou);
  CHECK(got.overall.occluded_iou == want.occluded_iou);
  for (int c = 0; c < 3; ++c)
    CHECK(got.overall.class_iou[static_cast<std::size_t>(c)] ==
          want.class_iou[static_cast<std::size_t>(c)]);
  CHECK(got.overall.frames == want.frames);
  CHECK(got.overall.qualifying_frames == want.qualifying_frames);
}

TEST_CASE("determinism: two identical two-stage runs produce identical params") {
  const ModelConfig cfg = micro_config();
  const Dataset data = micro_dataset(37, 3, cfg);
  const TrainOptions opt = micro_options(61);

  const auto run = [&]() {
    ModelParams p = init_model_params(61, cfg);
    train_stage1(data, p, opt, nullptr);
    train_stage2(data, p, opt, nullptr);
    return p;
  };
  ModelParams a = run();
  ModelParams b = run();
  auto pa = a.all(), pb = b.all();
  for (std::size_t i = 0; i < pa.size(); ++i)
    for (std::size_t j = 0; j < pa[i]->value.v.size(); ++j)
      CHECK(pa[i]->value.v[j] == pb[i]->value.v[j]);

  // and evaluation metrics are bit-identical too
  const EvalReport ra = evaluate(data, a);
  const EvalReport rb = evaluate(data, b);
  CHECK(eval_report_to_json(ra) == eval_report_to_json(rb));
}

TEST_CASE("apply_variant covers the ablation grid and rejects junk") {
  const ModelConfig base = micro_config();
  CHECK(apply_variant(base, "no_temporal").temporal == false);
  CHECK(apply_variant(base, "twm1").t_wm == 1);
  CHECK(apply_variant(base, "twm8").t_wm == 8);
  CHECK(apply_variant(base, "heatmap_off").use_heatmap == false);
  CHECK(apply_variant(base, "dil11").dil_h == 1);
  CHECK(apply_variant(base, "dil33").dil_w == 3);
  CHECK(apply_variant(base, "full").t_wm == base.t_wm);
  CHECK_THROWS_AS(apply_variant(base, "bogus"), ConfigError);
  try {
    apply_variant(base, "bogus");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("twm4") != std::string::npos);
  }
}

TEST_CASE("run_ablation pairs seeds and emits directional checks") {
  ModelConfig cfg = micro_config();
  const Dataset train_data = micro_dataset(43, 4, cfg);
  const Dataset eval_data = micro_dataset(44, 2, cfg);
  TrainOptions opt = micro_options(71);

  AblationOptions aopt;
  aopt.capture_midpoint = {"full"};
  aopt.capture_stage1 = {"full"};
  const AblationReport report = run_ablation(train_data, eval_data, cfg, opt,
                                             {"full", "no_temporal"}, {5, 6}, aopt);
  CHECK(report.runs.size() == 4);
  CHECK(report.seeds == std::vector<std::uint64_t>{5, 6});
  int full_runs = 0;
  for (const AblationRun& r : report.runs)
    if (r.variant == "full") {
      ++full_runs;
      CHECK(r.midpoint.has_value());
      CHECK(r.stage1_only.has_value());
    }
  CHECK(full_runs == 2);
  bool found_check = false;
  for (const DirectionalCheck& c : report.checks)
    if (c.name == "full_vs_no_temporal_ge_5pt") found_check = c.applicable;
  CHECK(found_check);
  const std::string json_text = ablation_report_to_json(report);
  CHECK(json_text.find("paired_seeds") != std::string::npos);
}

TEST_CASE("train log jsonl zeroes wall time in deterministic mode") {
  std::vector<EpochLog> log = {{1, 0, 0.5, 12.5}, {2, 0, 0.25, 30.0}};
  const std::string det = train_log_to_jsonl(log, true);
  CHECK(det.find("\"wall_s\":0.0") != std::string::npos);
  const std::string live = train_log_to_jsonl(log, false);
  CHECK(live.find("12.5") != std::string::npos);
}
