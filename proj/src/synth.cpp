#include "bevmem/synth.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "json.hpp"

BEVMEM_NS_BEGIN

using nlohmann::json;

const char* map_class_name(MapClass c) {
  switch (c) {
    case MapClass::ped_crossing:
      return "ped_crossing";
    case MapClass::divider:
      return "divider";
    case MapClass::boundary:
      return "boundary";
  }
  return "unknown";
}

std::optional<MapClass> map_class_from_name(const std::string& name) {
  if (name == "ped_crossing") return MapClass::ped_crossing;
  if (name == "divider") return MapClass::divider;
  if (name == "boundary") return MapClass::boundary;
  return std::nullopt;
}

void Scenario::validate() const {
  grid.validate();
  if (trajectory.size() < 2) throw DataError("scenario: trajectory needs at least 2 poses");
  for (std::size_t i = 1; i < trajectory.size(); ++i) {
    const double dx = trajectory[i].x - trajectory[i - 1].x;
    const double dy = trajectory[i].y - trajectory[i - 1].y;
    if (std::hypot(dx, dy) > 15.0)
      throw DataError("scenario: pose delta exceeds 15 m at frame " + std::to_string(i));
  }
  const int len = static_cast<int>(trajectory.size());
  for (const Occluder& o : occluders) {
    if (o.start_frame < 0 || o.end_frame > len || o.start_frame >= o.end_frame)
      throw DataError("scenario: occluder interval outside [0, len)");
    if (o.x_min >= o.x_max || o.y_min >= o.y_max)
      throw DataError("scenario: degenerate occluder rectangle");
  }
  for (const MapElement& e : map_elements) {
    if (e.polyline.size() < 2) throw DataError("scenario: map element needs >= 2 points");
    if (e.width_m <= 0.0) throw DataError("scenario: map element width must be positive");
  }
}

std::vector<Pose2> gen_trajectory(std::uint64_t seed, TrajectoryKind kind, int frames) {
  if (frames < 2) throw DataError("gen_trajectory: frames must be >= 2");
  constexpr double dt = 0.5;  // 2 Hz
  Rng rng(mix_seed(seed, 0x7261774aULL + static_cast<std::uint64_t>(kind)));
  std::vector<Pose2> poses;
  poses.reserve(static_cast<std::size_t>(frames));
  Pose2 p{0.0, 0.0, rng.uniform(-M_PI, M_PI)};
  poses.push_back(p);

  double speed = 0.0;
  std::vector<double> dyaw(static_cast<std::size_t>(frames), 0.0);
  std::vector<double> speeds(static_cast<std::size_t>(frames), 0.0);

  switch (kind) {
    case TrajectoryKind::straight: {
      speed = rng.uniform(5.0, 15.0);
      std::fill(speeds.begin(), speeds.end(), speed);
      break;
    }
    case TrajectoryKind::turn: {
      speed = rng.uniform(4.0, 9.0);
      std::fill(speeds.begin(), speeds.end(), speed);
      const int turn_len = std::min({10, frames - 1, 5});
      const int latest_start = frames - 1 - turn_len;
      const int turn_start = latest_start > 1 ? static_cast<int>(rng.uniform_int(1, latest_start)) : 0;
      const double total = rng.uniform(65.0, 95.0) * M_PI / 180.0 * (rng.uniform() < 0.5 ? -1 : 1);
      for (int t = 0; t < turn_len; ++t) dyaw[static_cast<std::size_t>(turn_start + t)] = total / turn_len;
      break;
    }
    case TrajectoryKind::varied_speed: {
      const double levels[3] = {2.0, 8.0, 14.0};
      int t = 0;
      while (t < frames) {
        const double s = levels[rng.uniform_int(0, 2)];
        const int hold = static_cast<int>(rng.uniform_int(2, 4));
        for (int i = 0; i < hold && t < frames; ++i, ++t) speeds[static_cast<std::size_t>(t)] = s;
      }
      break;
    }
  }

  for (int t = 1; t < frames; ++t) {
    const double v = speeds[static_cast<std::size_t>(t - 1)];
    p.x += v * dt * std::cos(p.yaw);
    p.y += v * dt * std::sin(p.yaw);
    p.yaw = normalize_yaw(p.yaw + dyaw[static_cast<std::size_t>(t - 1)]);
    poses.push_back(p);
  }
  return poses;
}

namespace {

// Stations every ~2.5 m along the polyline, with unit tangents.
struct Stations {
  std::vector<Point2> pts;
  std::vector<Point2> tangents;
};

Stations resample(const std::vector<Point2>& line, double step) {
  Stations st;
  if (line.size() < 2) return st;
  double carry = 0.0;
  for (std::size_t i = 0; i + 1 < line.size(); ++i) {
    const double segx = line[i + 1].x - line[i].x, segy = line[i + 1].y - line[i].y;
    const double len = std::hypot(segx, segy);
    if (len < 1e-9) continue;
    const Point2 tan{segx / len, segy / len};
    double s = carry;
    while (s < len) {
      st.pts.push_back({line[i].x + tan.x * s, line[i].y + tan.y * s});
      st.tangents.push_back(tan);
      s += step;
    }
    carry = s - len;
  }
  if (!st.pts.empty()) {
    st.pts.push_back(line.back());
    st.tangents.push_back(st.tangents.back());
  }
  return st;
}

std::vector<Point2> offset_curve(const Stations& st, double offset) {
  std::vector<Point2> out;
  out.reserve(st.pts.size());
  for (std::size_t i = 0; i < st.pts.size(); ++i) {
    const Point2 n{-st.tangents[i].y, st.tangents[i].x};  // left normal
    out.push_back({st.pts[i].x + n.x * offset, st.pts[i].y + n.y * offset});
  }
  return out;
}

}  // namespace

std::vector<MapElement> gen_map(std::uint64_t seed, const MapGenParams& params) {
  Rng rng(mix_seed(seed, 0x6d617047ULL));
  std::vector<MapElement> out;
  const Stations st = resample(params.centerline, 2.5);
  if (st.pts.size() < 2) throw DataError("gen_map: centerline too short");
  const double hw = params.half_width;

  out.push_back({MapClass::boundary, offset_curve(st, hw), rng.uniform(1.0, 1.5)});
  out.push_back({MapClass::boundary, offset_curve(st, -hw), rng.uniform(1.0, 1.5)});

  const int n_div = static_cast<int>(rng.uniform_int(params.dividers_min, params.dividers_max));
  for (int d = 0; d < n_div; ++d) {
    // spread dividers over the interior with a little jitter
    const double frac = (d + 1) / static_cast<double>(n_div + 1);
    const double off = (frac * 2.0 - 1.0) * (hw - 1.5) + rng.uniform(-0.5, 0.5);
    out.push_back({MapClass::divider, offset_curve(st, off), rng.uniform(1.0, 1.3)});
  }

  const int n_cross = st.pts.size() >= 4 ? static_cast<int>(rng.uniform_int(
                                               params.crossings_min, params.crossings_max))
                                         : 0;
  for (int c = 0; c < n_cross; ++c) {
    const std::size_t idx = static_cast<std::size_t>(
        rng.uniform_int(1, static_cast<std::int64_t>(st.pts.size()) - 2));
    const Point2 n{-st.tangents[idx].y, st.tangents[idx].x};
    const Point2 a{st.pts[idx].x + n.x * hw, st.pts[idx].y + n.y * hw};
    const Point2 b{st.pts[idx].x - n.x * hw, st.pts[idx].y - n.y * hw};
    out.push_back({MapClass::ped_crossing, {a, b}, rng.uniform(3.0, 5.0)});
  }
  return out;
}

Scenario gen_scenario(std::uint64_t seed, const SynthParams& params, const GridSpec& grid) {
  Rng rng(mix_seed(seed, 0x7363656eULL));
  Scenario s;
  s.grid = grid;

  const double mix_total = params.mix_straight + params.mix_turn + params.mix_varied;
  if (mix_total <= 0.0) throw ConfigError("gen_scenario: trajectory mix fractions sum to zero");
  const double draw = rng.uniform() * mix_total;
  TrajectoryKind kind = TrajectoryKind::varied_speed;
  if (draw < params.mix_straight)
    kind = TrajectoryKind::straight;
  else if (draw < params.mix_straight + params.mix_turn)
    kind = TrajectoryKind::turn;
  s.trajectory = gen_trajectory(mix_seed(seed, 1), kind, params.frames);

  // Corridor spine follows the driven path, extended past both ends so the
  // full grid stays covered at the first and last frames.
  const double reach =
      0.5 * std::hypot(static_cast<double>(grid.w_cells), static_cast<double>(grid.h_cells)) *
          grid.cell_size_m +
      10.0;
  std::vector<Point2> centerline;
  {
    const Pose2& p0 = s.trajectory.front();
    centerline.push_back(
        {p0.x - reach * std::cos(p0.yaw), p0.y - reach * std::sin(p0.yaw)});
    for (const Pose2& p : s.trajectory) centerline.push_back({p.x, p.y});
    const Pose2& pn = s.trajectory.back();
    centerline.push_back(
        {pn.x + reach * std::cos(pn.yaw), pn.y + reach * std::sin(pn.yaw)});
    // drop duplicate points from zero-motion frames
    std::vector<Point2> dedup;
    for (const Point2& pt : centerline)
      if (dedup.empty() || std::hypot(pt.x - dedup.back().x, pt.y - dedup.back().y) > 1e-6)
        dedup.push_back(pt);
    centerline = std::move(dedup);
  }

  MapGenParams mp;
  mp.centerline = centerline;
  mp.half_width = rng.uniform(params.corridor_half_width_min, params.corridor_half_width_max);
  mp.dividers_min = params.dividers_min;
  mp.dividers_max = params.dividers_max;
  mp.crossings_min = params.crossings_min;
  mp.crossings_max = params.crossings_max;
  s.map_elements = gen_map(mix_seed(seed, 2), mp);

  const int frames = params.frames;
  const int n_occ = static_cast<int>(rng.uniform_int(params.occluders_min, params.occluders_max));
  for (int i = 0; i < n_occ && frames >= 3; ++i) {
    Occluder o;
    o.start_frame = static_cast<int>(rng.uniform_int(1, std::max(1, frames - 2)));
    const int dur = static_cast<int>(
        rng.uniform_int(params.occluder_min_frames, params.occluder_max_frames));
    o.end_frame = std::min(frames, o.start_frame + dur);
    const double cx = rng.uniform(0.0, 14.0);
    const double cy = rng.uniform(-8.0, 8.0);
    const double lx = rng.uniform(6.0, 12.0);
    const double ly = rng.uniform(4.0, 8.0);
    o.x_min = cx - 0.5 * lx;
    o.x_max = cx + 0.5 * lx;
    o.y_min = cy - 0.5 * ly;
    o.y_max = cy + 0.5 * ly;
    s.occluders.push_back(o);
  }
  s.validate();
  return s;
}

namespace {

double point_segment_dist(const Point2& p, const Point2& a, const Point2& b) {
  const double abx = b.x - a.x, aby = b.y - a.y;
  const double len2 = abx * abx + aby * aby;
  double t = 0.0;
  if (len2 > 0.0) t = std::clamp(((p.x - a.x) * abx + (p.y - a.y) * aby) / len2, 0.0, 1.0);
  const double dx = p.x - (a.x + t * abx), dy = p.y - (a.y + t * aby);
  return std::hypot(dx, dy);
}

int precedence(MapClass c) {
  switch (c) {
    case MapClass::ped_crossing:
      return 3;
    case MapClass::divider:
      return 2;
    case MapClass::boundary:
      return 1;
  }
  return 0;
}

}  // namespace

std::vector<std::uint8_t> rasterize(const std::vector<MapElement>& map, const Pose2& pose,
                                    const GridSpec& spec) {
  const int H = spec.h_cells, W = spec.w_cells;
  std::vector<std::uint8_t> labels(static_cast<std::size_t>(H) * W, 0);
  std::vector<std::int8_t> rank(static_cast<std::size_t>(H) * W, 0);
  const Pose2 world_to_ego = inverse(pose);

  for (const MapElement& e : map) {
    const double r = 0.5 * e.width_m;
    const int pr = precedence(e.cls);
    std::vector<Point2> ego_pts;
    ego_pts.reserve(e.polyline.size());
    for (const Point2& p : e.polyline) ego_pts.push_back(apply(world_to_ego, p));
    for (std::size_t k = 0; k + 1 < ego_pts.size(); ++k) {
      const Point2& a = ego_pts[k];
      const Point2& b = ego_pts[k + 1];
      // cell-index bounding box of the segment, padded by the half width
      const Point2 lo_ij = spec.ego_to_grid_ij(
          {std::min(a.x, b.x) - r, std::min(a.y, b.y) - r});
      const Point2 hi_ij = spec.ego_to_grid_ij(
          {std::max(a.x, b.x) + r, std::max(a.y, b.y) + r});
      const int i0 = std::max(0, static_cast<int>(std::ceil(lo_ij.x - 0.5)));
      const int i1 = std::min(H - 1, static_cast<int>(std::floor(hi_ij.x + 0.5)));
      const int j0 = std::max(0, static_cast<int>(std::ceil(lo_ij.y - 0.5)));
      const int j1 = std::min(W - 1, static_cast<int>(std::floor(hi_ij.y + 0.5)));
      for (int i = i0; i <= i1; ++i) {
        for (int j = j0; j <= j1; ++j) {
          const std::size_t idx = static_cast<std::size_t>(i) * W + j;
          if (rank[idx] >= pr) continue;
          const Point2 c = spec.grid_to_ego(i, j);
          if (point_segment_dist(c, a, b) <= r) {
            rank[idx] = static_cast<std::int8_t>(pr);
            labels[idx] = static_cast<std::uint8_t>(static_cast<int>(e.cls));
          }
        }
      }
    }
  }
  return labels;
}

ObservationFrame observe(const std::vector<std::uint8_t>& gt_labels, const GridSpec& spec,
                         int frame_idx, const std::vector<Occluder>& occluders,
                         std::uint64_t noise_seed, double sigma) {
  if (sigma < 0.0) throw ConfigError("observe: sigma must be >= 0");
  const int H = spec.h_cells, W = spec.w_cells;
  if (static_cast<int>(gt_labels.size()) != H * W)
    throw ShapeError("observe: label size does not match grid");

  ObservationFrame f;
  f.gt_labels = gt_labels;
  f.visibility.assign(static_cast<std::size_t>(H) * W, 1);
  f.observation = Tensor({kNumClasses, H, W});
  for (int p = 0; p < H * W; ++p)
    f.observation.v[static_cast<std::size_t>(gt_labels[static_cast<std::size_t>(p)]) * H * W + p] =
        real(1);
  if (sigma > 0.0) {
    Rng rng(noise_seed);
    for (real& v : f.observation.v) v += static_cast<real>(sigma * rng.normal());
  }

  for (const Occluder& o : occluders) {
    if (frame_idx < o.start_frame || frame_idx >= o.end_frame) continue;
    for (int i = 0; i < H; ++i) {
      for (int j = 0; j < W; ++j) {
        const Point2 c = spec.grid_to_ego(i, j);
        if (c.x >= o.x_min && c.x <= o.x_max && c.y >= o.y_min && c.y <= o.y_max) {
          const std::size_t idx = static_cast<std::size_t>(i) * W + j;
          f.visibility[idx] = 0;
          for (int ch = 0; ch < kNumClasses; ++ch)
            f.observation.v[static_cast<std::size_t>(ch) * H * W + idx] = real(0);
        }
      }
    }
  }
  return f;
}

std::vector<ObservationFrame> render_scenario(const Scenario& s, std::uint64_t seed,
                                              double sigma) {
  std::vector<ObservationFrame> frames;
  frames.reserve(s.trajectory.size());
  for (std::size_t t = 0; t < s.trajectory.size(); ++t) {
    const auto labels = rasterize(s.map_elements, s.trajectory[t], s.grid);
    frames.push_back(observe(labels, s.grid, static_cast<int>(t), s.occluders,
                             mix_seed(seed, 0x6e6f6973ULL + t), sigma));
  }
  return frames;
}

std::pair<int, int> split_sequence(int length, std::uint64_t seed) {
  if (length < 4) throw DataError("split_sequence: need at least 4 frames");
  Rng rng(mix_seed(seed, 0x73706c69ULL));
  const int cut = static_cast<int>(rng.uniform_int(2, length - 2));
  return {cut, length - cut};
}

std::string scenario_to_json(const Scenario& s) {
  json j;
  j["version"] = 1;
  j["grid"] = {{"h_cells", s.grid.h_cells},
               {"w_cells", s.grid.w_cells},
               {"cell_size_m", s.grid.cell_size_m}};
  json elems = json::array();
  for (const MapElement& e : s.map_elements) {
    json pts = json::array();
    for (const Point2& p : e.polyline) pts.push_back({p.x, p.y});
    elems.push_back({{"class", map_class_name(e.cls)}, {"width_m", e.width_m}, {"points", pts}});
  }
  j["map_elements"] = elems;
  json traj = json::array();
  for (const Pose2& p : s.trajectory) traj.push_back({p.x, p.y, p.yaw});
  j["trajectory"] = traj;
  json occ = json::array();
  for (const Occluder& o : s.occluders)
    occ.push_back({{"start_frame", o.start_frame},
                   {"end_frame", o.end_frame},
                   {"rect", {o.x_min, o.y_min, o.x_max, o.y_max}}});
  j["occluders"] = occ;
  return j.dump(2) + "\n";
}

Scenario scenario_from_json(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw DataError(std::string("scenario: invalid JSON: ") + e.what());
  }
  try {
    if (!j.contains("version") || j["version"].get<int>() != 1)
      throw DataError("scenario: unsupported or missing version");
    Scenario s;
    s.grid.h_cells = j.at("grid").at("h_cells").get<int>();
    s.grid.w_cells = j.at("grid").at("w_cells").get<int>();
    s.grid.cell_size_m = j.at("grid").at("cell_size_m").get<double>();
    for (const json& e : j.at("map_elements")) {
      MapElement el;
      const auto cls = map_class_from_name(e.at("class").get<std::string>());
      if (!cls) throw DataError("scenario: unknown map element class");
      el.cls = *cls;
      el.width_m = e.at("width_m").get<double>();
      for (const json& p : e.at("points"))
        el.polyline.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
      s.map_elements.push_back(std::move(el));
    }
    for (const json& p : j.at("trajectory"))
      s.trajectory.push_back({p.at(0).get<double>(), p.at(1).get<double>(), p.at(2).get<double>()});
    for (const json& o : j.at("occluders")) {
      Occluder oc;
      oc.start_frame = o.at("start_frame").get<int>();
      oc.end_frame = o.at("end_frame").get<int>();
      oc.x_min = o.at("rect").at(0).get<double>();
      oc.y_min = o.at("rect").at(1).get<double>();
      oc.x_max = o.at("rect").at(2).get<double>();
      oc.y_max = o.at("rect").at(3).get<double>();
      s.occluders.push_back(oc);
    }
    s.validate();
    return s;
  } catch (const json::exception& e) {
    throw DataError(std::string("scenario: malformed fields: ") + e.what());
  }
}

void save_scenario(const Scenario& s, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out << scenario_to_json(s);
}

Scenario load_scenario(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return scenario_from_json(ss.str());
}

BEVMEM_NS_END
