#include "bevmem/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

BEVMEM_NS_BEGIN

ModelConfig RunConfig::model_config() const {
  ModelConfig m;
  m.grid = grid;
  m.channels = channels;
  m.t_wm = t_wm;
  m.c_h = c_h;
  m.dil_h = dil_h;
  m.dil_w = dil_w;
  m.temporal = temporal;
  m.use_heatmap = heatmap;
  m.validate();
  return m;
}

TrainOptions RunConfig::train_options() const {
  TrainOptions t;
  t.adam = {lr, beta1, beta2, adam_eps, weight_decay};
  t.focal = {static_cast<real>(focal_gamma), static_cast<real>(focal_alpha),
             static_cast<real>(lambda1)};
  t.stage1_epochs = stage1_epochs;
  t.stage2_epochs = stage2_epochs;
  t.stage1_frames_per_scenario = stage1_frames_per_scenario;
  t.seed = seed;
  t.deterministic = deterministic;
  return t;
}

namespace {

std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

struct KeyHandler {
  std::function<void(RunConfig&, const std::string&)> set;
};

double parse_double(const std::string& v, const std::string& key) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument("trailing characters");
    return d;
  } catch (const std::exception&) {
    throw ConfigError("config: key '" + key + "' expects a number, got '" + v + "'");
  }
}

std::int64_t parse_int(const std::string& v, const std::string& key) {
  std::int64_t out = 0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size())
    throw ConfigError("config: key '" + key + "' expects an integer, got '" + v + "'");
  return out;
}

bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "true") return true;
  if (v == "false") return false;
  throw ConfigError("config: key '" + key + "' expects true/false, got '" + v + "'");
}

void check_range(bool ok, const std::string& key, const std::string& what) {
  if (!ok) throw ConfigError("config: key '" + key + "' out of range (" + what + ")");
}

}  // namespace

RunConfig parse_config_text(const std::string& text) {
  RunConfig cfg;
  using Setter = std::function<void(RunConfig&, const std::string&, const std::string&)>;
  static const std::map<std::string, Setter> handlers = {
      {"grid.h_cells",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         const auto n = parse_int(v, k);
         check_range(n >= 1 && n <= 4096, k, ">= 1");
         c.grid.h_cells = static_cast<int>(n);
       }},
      {"grid.w_cells",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         const auto n = parse_int(v, k);
         check_range(n >= 1 && n <= 4096, k, ">= 1");
         c.grid.w_cells = static_cast<int>(n);
       }},
      {"grid.cell_size_m",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         const double d = parse_double(v, k);
         check_range(d > 0.0 && d <= 100.0, k, "> 0");
         c.grid.cell_size_m = d;
       }},
      {"model.channels",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         const auto n = parse_int(v, k);
         check_range(n >= 1 && n <= 4096, k, ">= 1");
         c.channels = static_cast<int>(n);
       }},
      {"model.t_wm",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         const auto n = parse_int(v, k);
         check_range(n >= 1 && n <= 64, k, "1..64");
         c.t_wm = static_cast<int>(n);
       }},
      {"model.c_h",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         const auto n = parse_int(v, k);
         check_range(n >= 1 && n <= 4096, k, ">= 1");
         c.c_h = static_cast<int>(n);
       }},
      {"model.dilation_h",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         const auto n = parse_int(v, k);
         check_range(n >= 1 && n <= 16, k, "1..16");
         c.dil_h = static_cast<int>(n);
       }},
      {"model.dilation_w",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         const auto n = parse_int(v, k);
         check_range(n >= 1 && n <= 16, k, "1..16");
         c.dil_w = static_cast<int>(n);
       }},
      {"model.temporal",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.temporal = parse_bool(v, k);
       }},
      {"model.heatmap",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.heatmap = parse_bool(v, k);
       }},
      {"training.lr",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         const double d = parse_double(v, k);
         check_range(d > 0.0 && d <= 1.0, k, "(0, 1]");
         c.lr = d;
       }},
      {"training.beta1",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         const double d = parse_double(v, k);
         check_range(d >= 0.0 && d < 1.0, k, "[0, 1)");
         c.beta1 = d;
       }},
      {"training.beta2",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         const double d = parse_double(v, k);
         check_range(d >= 0.0 && d < 1.0, k, "[0, 1)");
         c.beta2 = d;
       }},
      {"training.adam_eps",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         const double d = parse_double(v, k);
         check_range(d > 0.0, k, "> 0");
         c.adam_eps = d;
       }},
      {"training.weight_decay",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         const double d = parse_double(v, k);
         check_range(d >= 0.0 && d < 1.0, k, "[0, 1)");
         c.weight_decay = d;
       }},
      {"training.stage1_epochs",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         const auto n = parse_int(v, k);
         check_range(n >= 0 && n <= 1000, k, "0..1000");
         c.stage1_epochs = static_cast<int>(n);
       }},
      {"training.stage2_epochs",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         const auto n = parse_int(v, k);
         check_range(n >= 0 && n <= 1000, k, "0..1000");
         c.stage2_epochs = static_cast<int>(n);
       }},
      {"training.stage1_frames_per_scenario",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         const auto n = parse_int(v, k);
         check_range(n >= 1 && n <= 100, k, "1..100");
         c.stage1_frames_per_scenario = static_cast<int>(n);
       }},
      {"training.seed",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.seed = static_cast<std::uint64_t>(parse_int(v, k));
       }},
      {"training.deterministic",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.deterministic = parse_bool(v, k);
       }},
      {"training.lambda1",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         const double d = parse_double(v, k);
         check_range(d > 0.0, k, "> 0");
         c.lambda1 = d;
       }},
      {"training.lambda2",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         const double d = parse_double(v, k);
         check_range(d >= 0.0, k, ">= 0");
         c.lambda2 = d;
       }},
      {"training.lambda3",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         const double d = parse_double(v, k);
         check_range(d >= 0.0, k, ">= 0");
         c.lambda3 = d;
       }},
      {"training.focal_gamma",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         const double d = parse_double(v, k);
         check_range(d >= 0.0 && d <= 10.0, k, "[0, 10]");
         c.focal_gamma = d;
       }},
      {"training.focal_alpha",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         const double d = parse_double(v, k);
         check_range(d > 0.0 && d <= 1.0, k, "(0, 1]");
         c.focal_alpha = d;
       }},
      {"data.scenario_count",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         const auto n = parse_int(v, k);
         check_range(n >= 1 && n <= 100000, k, ">= 1");
         c.scenario_count = static_cast<int>(n);
       }},
      {"data.frames",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         const auto n = parse_int(v, k);
         check_range(n >= 2 && n <= 1000, k, ">= 2");
         c.synth.frames = static_cast<int>(n);
       }},
      {"data.noise_sigma",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         const double d = parse_double(v, k);
         check_range(d >= 0.0 && d <= 10.0, k, ">= 0");
         c.synth.noise_sigma = d;
       }},
      {"data.mix_straight",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         const double d = parse_double(v, k);
         check_range(d >= 0.0, k, ">= 0");
         c.synth.mix_straight = d;
       }},
      {"data.mix_turn",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         const double d = parse_double(v, k);
         check_range(d >= 0.0, k, ">= 0");
         c.synth.mix_turn = d;
       }},
      {"data.mix_varied",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         const double d = parse_double(v, k);
         check_range(d >= 0.0, k, ">= 0");
         c.synth.mix_varied = d;
       }},
      {"data.occluders_min",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         const auto n = parse_int(v, k);
         check_range(n >= 0 && n <= 16, k, "0..16");
         c.synth.occluders_min = static_cast<int>(n);
       }},
      {"data.occluders_max",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         const auto n = parse_int(v, k);
         check_range(n >= 0 && n <= 16, k, "0..16");
         c.synth.occluders_max = static_cast<int>(n);
       }},
      {"data.occluder_min_frames",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         const auto n = parse_int(v, k);
         check_range(n >= 1 && n <= 1000, k, ">= 1");
         c.synth.occluder_min_frames = static_cast<int>(n);
       }},
      {"data.occluder_max_frames",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         const auto n = parse_int(v, k);
         check_range(n >= 1 && n <= 1000, k, ">= 1");
         c.synth.occluder_max_frames = static_cast<int>(n);
       }},
      {"paths.data_dir",
       [](RunConfig& c, const std::string&, const std::string& v) { c.data_dir = v; }},
      {"paths.checkpoint",
       [](RunConfig& c, const std::string&, const std::string& v) { c.checkpoint = v; }},
      {"paths.report_dir",
       [](RunConfig& c, const std::string&, const std::string& v) { c.report_dir = v; }},
  };

  static const std::set<std::string> known_sections = {"grid", "model", "training", "data",
                                                       "paths"};

  std::istringstream in(text);
  std::string line;
  std::string section;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto strip = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      if (b == std::string::npos) return std::string();
      const auto e = s.find_last_not_of(" \t\r");
      return s.substr(b, e - b + 1);
    };
    line = strip(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError("config line " + std::to_string(line_no) + ": malformed section header");
      section = strip(line.substr(1, line.size() - 2));
      if (!known_sections.count(section))
        throw ConfigError("config line " + std::to_string(line_no) + ": unknown section '" +
                          section + "'");
      continue;
    }
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    const std::string key = strip(line.substr(0, eq));
    const std::string value = strip(line.substr(eq + 1));
    if (section.empty())
      throw ConfigError("config line " + std::to_string(line_no) + ": key outside any section");
    const std::string full = section + "." + key;
    const auto it = handlers.find(full);
    if (it == handlers.end())
      throw ConfigError("config line " + std::to_string(line_no) + ": unknown key '" + full + "'");
    it->second(cfg, full, value);
  }

  if (cfg.synth.occluders_min > cfg.synth.occluders_max)
    throw ConfigError("config: data.occluders_min > data.occluders_max");
  if (cfg.synth.occluder_min_frames > cfg.synth.occluder_max_frames)
    throw ConfigError("config: data.occluder_min_frames > data.occluder_max_frames");
  if (cfg.synth.mix_straight + cfg.synth.mix_turn + cfg.synth.mix_varied <= 0.0)
    throw ConfigError("config: trajectory mix fractions sum to zero");
  cfg.model_config();  // validates model + grid ranges together
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

std::string RunConfig::canonical_generation_dump() const {
  std::string s;
  s += "grid.h_cells=" + std::to_string(grid.h_cells) + "\n";
  s += "grid.w_cells=" + std::to_string(grid.w_cells) + "\n";
  s += "grid.cell_size_m=" + fmt_double(grid.cell_size_m) + "\n";
  s += "data.scenario_count=" + std::to_string(scenario_count) + "\n";
  s += "data.frames=" + std::to_string(synth.frames) + "\n";
  s += "data.noise_sigma=" + fmt_double(synth.noise_sigma) + "\n";
  s += "data.mix_straight=" + fmt_double(synth.mix_straight) + "\n";
  s += "data.mix_turn=" + fmt_double(synth.mix_turn) + "\n";
  s += "data.mix_varied=" + fmt_double(synth.mix_varied) + "\n";
  s += "data.occluders_min=" + std::to_string(synth.occluders_min) + "\n";
  s += "data.occluders_max=" + std::to_string(synth.occluders_max) + "\n";
  s += "data.occluder_min_frames=" + std::to_string(synth.occluder_min_frames) + "\n";
  s += "data.occluder_max_frames=" + std::to_string(synth.occluder_max_frames) + "\n";
  return s;
}

std::string RunConfig::config_hash() const {
  const std::string dump = canonical_generation_dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : dump) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string default_config_text() {
  const RunConfig d;
  std::string s;
  s += "# benchmark preset (all values are the defaults)\n";
  s += "[grid]\n";
  s += "h_cells = " + std::to_string(d.grid.h_cells) + "\n";
  s += "w_cells = " + std::to_string(d.grid.w_cells) + "\n";
  s += "cell_size_m = " + fmt_double(d.grid.cell_size_m) + "\n";
  s += "\n[model]\n";
  s += "channels = " + std::to_string(d.channels) + "\n";
  s += "t_wm = " + std::to_string(d.t_wm) + "\n";
  s += "c_h = " + std::to_string(d.c_h) + "\n";
  s += "dilation_h = " + std::to_string(d.dil_h) + "\n";
  s += "dilation_w = " + std::to_string(d.dil_w) + "\n";
  s += "temporal = true\nheatmap = true\n";
  s += "\n[training]\n";
  s += "lr = " + fmt_double(d.lr) + "\n";
  s += "beta1 = " + fmt_double(d.beta1) + "\n";
  s += "beta2 = " + fmt_double(d.beta2) + "\n";
  s += "adam_eps = " + fmt_double(d.adam_eps) + "\n";
  s += "weight_decay = " + fmt_double(d.weight_decay) + "\n";
  s += "stage1_epochs = " + std::to_string(d.stage1_epochs) + "\n";
  s += "stage2_epochs = " + std::to_string(d.stage2_epochs) + "\n";
  s += "stage1_frames_per_scenario = " + std::to_string(d.stage1_frames_per_scenario) + "\n";
  s += "seed = " + std::to_string(d.seed) + "\n";
  s += "deterministic = true\n";
  s += "lambda1 = " + fmt_double(d.lambda1) + "\n";
  s += "lambda2 = " + fmt_double(d.lambda2) + "\n";
  s += "lambda3 = " + fmt_double(d.lambda3) + "\n";
  s += "focal_gamma = " + fmt_double(d.focal_gamma) + "\n";
  s += "focal_alpha = " + fmt_double(d.focal_alpha) + "\n";
  s += "\n[data]\n";
  s += "scenario_count = " + std::to_string(d.scenario_count) + "\n";
  s += "frames = " + std::to_string(d.synth.frames) + "\n";
  s += "noise_sigma = " + fmt_double(d.synth.noise_sigma) + "\n";
  s += "mix_straight = " + fmt_double(d.synth.mix_straight) + "\n";
  s += "mix_turn = " + fmt_double(d.synth.mix_turn) + "\n";
  s += "mix_varied = " + fmt_double(d.synth.mix_varied) + "\n";
  s += "occluders_min = " + std::to_string(d.synth.occluders_min) + "\n";
  s += "occluders_max = " + std::to_string(d.synth.occluders_max) + "\n";
  s += "occluder_min_frames = " + std::to_string(d.synth.occluder_min_frames) + "\n";
  s += "occluder_max_frames = " + std::to_string(d.synth.occluder_max_frames) + "\n";
  return s;
}

BEVMEM_NS_END
