// bevmem: data generation, training, evaluation, ablations, gradient checks
// and visualization for the BEV working-memory fusion engine.
//
// Exit codes: 0 success, 1 usage error, 2 data/config error, 3 check failure.

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "bevmem/config.hpp"
#include "bevmem/gradcheck_result.hpp"
#include "bevmem/image_io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace bevmem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitCheck = 3;

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out << content;
}

std::string scenario_path(const std::string& dir, int index) {
  char name[32];
  std::snprintf(name, sizeof(name), "scenario_%04d.json", index);
  return (fs::path(dir) / name).string();
}

std::vector<Scenario> load_data_dir(const std::string& dir) {
  const fs::path manifest_path = fs::path(dir) / "manifest.json";
  std::ifstream in(manifest_path);
  if (!in) throw DataError("no manifest.json in " + dir);
  json manifest;
  try {
    manifest = json::parse(in);
  } catch (const json::exception& e) {
    throw DataError("invalid manifest: " + std::string(e.what()));
  }
  if (!manifest.contains("version") || manifest["version"].get<int>() != 1)
    throw DataError("manifest: unsupported version");
  const int count = manifest.at("count").get<int>();
  if (count < 1) throw DataError("manifest: empty dataset");
  std::vector<Scenario> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) out.push_back(load_scenario(scenario_path(dir, i)));
  return out;
}

int cmd_gen(const std::string& config_path, const std::string& out_dir, int count,
            std::uint64_t seed) {
  const RunConfig cfg = config_path.empty() ? RunConfig{} : load_config(config_path);
  if (count <= 0) throw ConfigError("gen: --count must be >= 1");
  fs::create_directories(out_dir);

  std::vector<Scenario> scenarios(static_cast<std::size_t>(count));
  parallel_for(count, [&](std::int64_t b, std::int64_t e) {
    for (std::int64_t i = b; i < e; ++i)
      scenarios[static_cast<std::size_t>(i)] =
          gen_scenario(mix_seed(seed, static_cast<std::uint64_t>(i)), cfg.synth, cfg.grid);
  });
  for (int i = 0; i < count; ++i) save_scenario(scenarios[static_cast<std::size_t>(i)], scenario_path(out_dir, i));

  json manifest;
  manifest["version"] = 1;
  manifest["count"] = count;
  manifest["seed"] = seed;
  manifest["config_hash"] = cfg.config_hash();
  write_file((fs::path(out_dir) / "manifest.json").string(), manifest.dump(2) + "\n");
  std::printf("wrote %d scenarios + manifest to %s\n", count, out_dir.c_str());
  return kExitOk;
}

int cmd_train(const std::string& config_path, const std::string& data_dir,
              const std::string& out_checkpoint, const std::string& in_checkpoint,
              const std::string& stage) {
  const RunConfig cfg = config_path.empty() ? RunConfig{} : load_config(config_path);
  const ModelConfig mcfg = cfg.model_config();
  const TrainOptions topt = cfg.train_options();

  const std::vector<Scenario> scenarios = load_data_dir(data_dir);
  const Dataset data = build_dataset(scenarios, mix_seed(cfg.seed, 0x72656e64ULL),
                                     cfg.synth.noise_sigma);
  if (!(data.grid == mcfg.grid))
    throw ConfigError("train: dataset grid does not match the configured grid");

  ModelParams params = init_model_params(cfg.seed, mcfg);
  if (!in_checkpoint.empty()) load_checkpoint(params, in_checkpoint);

  std::vector<EpochLog> log;
  if (stage == "1" || stage == "both") train_stage1(data, params, topt, &log);
  if (stage == "2" || stage == "both") train_stage2(data, params, topt, &log);

  save_checkpoint(params, out_checkpoint);
  const fs::path log_path = fs::path(out_checkpoint).parent_path() / "train_log.jsonl";
  write_file(log_path.string(), train_log_to_jsonl(log, topt.deterministic));
  std::printf("checkpoint: %s\ntrain log: %s\n", out_checkpoint.c_str(),
              log_path.string().c_str());
  return kExitOk;
}

int cmd_eval(const std::string& config_path, const std::string& checkpoint_path,
             const std::string& data_dir, const std::string& report_path) {
  const RunConfig cfg = config_path.empty() ? RunConfig{} : load_config(config_path);
  const ModelConfig mcfg = cfg.model_config();

  const std::vector<Scenario> scenarios = load_data_dir(data_dir);
  const Dataset data = build_dataset(scenarios, mix_seed(cfg.seed, 0x72656e64ULL),
                                     cfg.synth.noise_sigma);
  ModelParams params = init_model_params(cfg.seed, mcfg);
  load_checkpoint(params, checkpoint_path);

  const EvalReport report = evaluate(data, params);
  if (!report_path.empty()) {
    const fs::path parent = fs::path(report_path).parent_path();
    if (!parent.empty()) fs::create_directories(parent);
    write_file(report_path, eval_report_to_json(report));
  }
  std::printf("mean IoU %.4f | occluded IoU %.4f | frames %lld\n", report.overall.mean_iou,
              report.overall.occluded_iou, static_cast<long long>(report.overall.frames));
  return kExitOk;
}

int cmd_ablate(const std::string& config_path, const std::string& train_dir,
               const std::string& eval_dir, const std::string& variants_csv,
               const std::string& report_path, const std::string& seeds_csv) {
  const RunConfig cfg = config_path.empty() ? RunConfig{} : load_config(config_path);
  const ModelConfig base = cfg.model_config();
  const TrainOptions topt = cfg.train_options();

  std::vector<std::string> variants;
  {
    std::stringstream ss(variants_csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
      if (!item.empty()) variants.push_back(item);
    }
  }
  if (variants.empty()) throw ConfigError("ablate: no variants given");
  for (const std::string& v : variants) apply_variant(base, v);  // validate names up front

  std::vector<std::uint64_t> seeds;
  {
    std::stringstream ss(seeds_csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
      if (!item.empty()) seeds.push_back(std::stoull(item));
    }
  }
  if (seeds.empty()) throw ConfigError("ablate: no seeds given");

  const Dataset train_data = build_dataset(load_data_dir(train_dir),
                                           mix_seed(cfg.seed, 0x72656e64ULL), cfg.synth.noise_sigma);
  const Dataset eval_data = build_dataset(load_data_dir(eval_dir),
                                          mix_seed(cfg.seed, 0x6576616cULL), cfg.synth.noise_sigma);

  const AblationReport report =
      run_ablation(train_data, eval_data, base, topt, variants, seeds, {});
  const fs::path parent = fs::path(report_path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
  write_file(report_path, ablation_report_to_json(report));

  std::printf("%-14s %-12s %-12s\n", "variant", "mean IoU", "occluded IoU");
  for (const std::string& v : report.variants)
    std::printf("%-14s %-12.4f %-12.4f\n", v.c_str(), report.mean_iou(v), report.mean_occluded(v));
  for (const DirectionalCheck& c : report.checks)
    if (c.applicable)
      std::printf("check %-28s %s (gap %.2f pts, need %.2f)\n", c.name.c_str(),
                  c.pass ? "PASS" : "FAIL", c.value, c.threshold);
  return kExitOk;
}

int cmd_viz(const std::string& config_path, const std::string& checkpoint_path,
            const std::string& scenario_path_arg, int frame, const std::string& out_dir) {
  const RunConfig cfg = config_path.empty() ? RunConfig{} : load_config(config_path);
  const Scenario scenario = load_scenario(scenario_path_arg);
  const int frames = static_cast<int>(scenario.trajectory.size());
  if (frame < 0 || frame >= frames)
    throw DataError("viz: frame " + std::to_string(frame) + " out of range [0, " +
                    std::to_string(frames) + ")");
  fs::create_directories(out_dir);

  // replay the heatmap recurrence up to the requested frame
  OverlapHeatmap hm = OverlapHeatmap::init(scenario.grid);
  for (int t = 1; t <= frame; ++t)
    hm = step(hm, relative_transform(scenario.trajectory[static_cast<std::size_t>(t) - 1],
                                     scenario.trajectory[static_cast<std::size_t>(t)]));
  char suffix[16];
  std::snprintf(suffix, sizeof(suffix), "%04d", frame);
  write_pgm((fs::path(out_dir) / ("heatmap_" + std::string(suffix) + ".pgm")).string(),
            scenario.grid.h_cells, scenario.grid.w_cells, render_heatmap(hm, frame));

  const auto labels = rasterize(scenario.map_elements, scenario.trajectory[static_cast<std::size_t>(frame)],
                                scenario.grid);
  write_ppm((fs::path(out_dir) / ("gt_" + std::string(suffix) + ".ppm")).string(),
            scenario.grid.h_cells, scenario.grid.w_cells,
            render_class_map(labels, scenario.grid.h_cells, scenario.grid.w_cells));

  if (!checkpoint_path.empty()) {
    ModelConfig mcfg = cfg.model_config();
    mcfg.grid = scenario.grid;
    ModelParams params = init_model_params(cfg.seed, mcfg);
    load_checkpoint(params, checkpoint_path);
    const Dataset data = build_dataset({scenario}, mix_seed(cfg.seed, 0x72656e64ULL),
                                       cfg.synth.noise_sigma);
    const SequenceData& seq = data.sequences.front();
    WorkingMemory wm;
    std::vector<std::uint8_t> pred(static_cast<std::size_t>(scenario.grid.h_cells) *
                                   scenario.grid.w_cells);
    for (int t = 0; t <= frame; ++t) {
      const ObservationFrame& fr = seq.frames[static_cast<std::size_t>(t)];
      if (mcfg.temporal && t == 0)
        wm = WorkingMemory::init(stem_forward_value(params, fr.observation), mcfg.t_wm, mcfg.grid);
      Tape tape(false);
      const ForwardResult res = forward_frame(tape, fr, mcfg.temporal ? &wm : nullptr, params);
      if (t == frame) {
        const Tensor& logits = tape.val(res.logits);
        const int HW = mcfg.grid.h_cells * mcfg.grid.w_cells;
        for (int p = 0; p < HW; ++p) {
          int best = 0;
          real best_v = logits.v[static_cast<std::size_t>(p)];
          for (int c = 1; c < kNumClasses; ++c)
            if (logits.v[static_cast<std::size_t>(c) * HW + p] > best_v) {
              best_v = logits.v[static_cast<std::size_t>(c) * HW + p];
              best = c;
            }
          pred[static_cast<std::size_t>(p)] = static_cast<std::uint8_t>(best);
        }
      } else if (mcfg.temporal) {
        wm.advance(tape.val(res.fused),
                   relative_transform(scenario.trajectory[static_cast<std::size_t>(t)],
                                      scenario.trajectory[static_cast<std::size_t>(t) + 1]));
      }
    }
    write_ppm((fs::path(out_dir) / ("pred_" + std::string(suffix) + ".ppm")).string(),
              scenario.grid.h_cells, scenario.grid.w_cells,
              render_class_map(pred, scenario.grid.h_cells, scenario.grid.w_cells));
  }
  std::printf("viz written to %s\n", out_dir.c_str());
  return kExitOk;
}

int cmd_gradcheck(std::uint64_t seed) {
  const bool corrupt = std::getenv("BEVMEM_CORRUPT_ADJOINT") != nullptr;
  bool all_pass = true;
  for (int mode = 0; mode < 2; ++mode) {
    const auto suite = mode == 0 ? bevmem_run_gradcheck_f32(seed, corrupt)
                                 : bevmem_run_gradcheck_f64(seed, corrupt);
    std::printf("-- %s precision --\n", mode == 0 ? "32-bit" : "64-bit");
    for (const auto& op : suite.ops) {
      std::printf("%-20s max rel err %.3e (threshold %.0e) %s\n", op.op.c_str(), op.max_rel_err,
                  op.threshold, op.pass ? "ok" : "FAIL");
      if (!op.pass) all_pass = false;
    }
    std::printf("suite wall time %.2f s\n", suite.wall_s);
  }
  if (!all_pass) {
    std::fprintf(stderr, "gradcheck: FAILED\n");
    return kExitCheck;
  }
  std::printf("gradcheck: all ops pass\n");
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"BEV working-memory temporal fusion engine"};
  app.require_subcommand(1);

  std::string config_path, out_dir, data_dir, eval_dir, checkpoint, in_checkpoint, report_path,
      scenario_file, variants, seeds_csv = "1,2,3", stage = "both";
  int count = 0, frame = 0;
  std::uint64_t seed = 1;

  auto* gen = app.add_subcommand("gen", "generate a scenario dataset");
  gen->add_option("--config", config_path, "config file");
  gen->add_option("--out", out_dir, "output directory")->required();
  gen->add_option("--count", count, "number of scenarios")->required();
  gen->add_option("--seed", seed, "master seed");

  auto* train = app.add_subcommand("train", "train on a generated dataset");
  train->add_option("--config", config_path, "config file");
  train->add_option("--data", data_dir, "dataset directory")->required();
  train->add_option("--out-checkpoint", checkpoint, "checkpoint to write")->required();
  train->add_option("--in-checkpoint", in_checkpoint, "checkpoint to resume from");
  train->add_option("--stage", stage, "1, 2 or both")->check(CLI::IsMember({"1", "2", "both"}));

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  eval->add_option("--config", config_path, "config file");
  eval->add_option("--checkpoint", checkpoint, "checkpoint to evaluate")->required();
  eval->add_option("--data", data_dir, "dataset directory")->required();
  eval->add_option("--report", report_path, "report JSON to write");

  auto* ablate = app.add_subcommand("ablate", "train and compare ablation variants");
  ablate->add_option("--config", config_path, "config file");
  ablate->add_option("--data", data_dir, "training dataset directory")->required();
  ablate->add_option("--eval-data", eval_dir, "evaluation dataset directory")->required();
  ablate->add_option("--variants", variants, "comma-separated variant names")->required();
  ablate->add_option("--report", report_path, "report JSON to write")->required();
  ablate->add_option("--seeds", seeds_csv, "comma-separated seeds (paired across variants)");

  auto* viz = app.add_subcommand("viz", "render heatmap / gt / prediction images");
  viz->add_option("--config", config_path, "config file");
  viz->add_option("--checkpoint", checkpoint, "optional checkpoint for predictions");
  viz->add_option("--scenario", scenario_file, "scenario JSON")->required();
  viz->add_option("--frame", frame, "frame index")->required();
  viz->add_option("--out", out_dir, "output directory")->required();

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient verification");
  gradcheck->add_option("--seed", seed, "suite seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (gen->parsed()) return cmd_gen(config_path, out_dir, count, seed);
    if (train->parsed()) return cmd_train(config_path, data_dir, checkpoint, in_checkpoint, stage);
    if (eval->parsed()) return cmd_eval(config_path, checkpoint, data_dir, report_path);
    if (ablate->parsed())
      return cmd_ablate(config_path, data_dir, eval_dir, variants, report_path, seeds_csv);
    if (viz->parsed()) return cmd_viz(config_path, checkpoint, scenario_file, frame, out_dir);
    if (gradcheck->parsed()) return cmd_gradcheck(seed);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitData;
  } catch (const DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kExitData;
  } catch (const CheckpointError& e) {
    std::fprintf(stderr, "checkpoint error: %s\n", e.what());
    return kExitData;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitData;
  }
  return kExitUsage;
}
