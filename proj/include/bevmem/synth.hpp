#pragma once

#include <array>
#include <optional>

#include "bevmem/pose.hpp"
#include "bevmem/tensor.hpp"

BEVMEM_NS_BEGIN

enum class MapClass : int { ped_crossing = 1, divider = 2, boundary = 3 };
constexpr int kBackground = 0;
constexpr int kNumClasses = 4;  // background + 3 map element classes

const char* map_class_name(MapClass c);
std::optional<MapClass> map_class_from_name(const std::string& name);

struct MapElement {
  MapClass cls;
  std::vector<Point2> polyline;  // world frame, meters
  double width_m = 1.0;
};

// Axis-aligned rectangle in the ego frame, active on [start_frame, end_frame).
struct Occluder {
  int start_frame = 0;
  int end_frame = 0;
  double x_min = 0, y_min = 0, x_max = 0, y_max = 0;
};

struct Scenario {
  GridSpec grid;
  std::vector<MapElement> map_elements;
  std::vector<Pose2> trajectory;  // world poses at 2 Hz
  std::vector<Occluder> occluders;

  void validate() const;
};

enum class TrajectoryKind { straight, turn, varied_speed };

struct SynthParams {
  int frames = 40;  // 20 s at 2 Hz
  double mix_straight = 0.4;
  double mix_turn = 0.3;
  double mix_varied = 0.3;
  double noise_sigma = 0.3;
  int occluders_min = 1;
  int occluders_max = 2;
  int occluder_min_frames = 3;
  int occluder_max_frames = 8;
  // map geometry bounds
  double corridor_half_width_min = 5.0;
  double corridor_half_width_max = 8.0;
  int dividers_min = 1;
  int dividers_max = 3;
  int crossings_min = 0;
  int crossings_max = 3;
};

struct MapGenParams {
  std::vector<Point2> centerline;  // corridor spine, world frame
  double half_width = 6.0;
  int dividers_min = 1;
  int dividers_max = 3;
  int crossings_min = 0;
  int crossings_max = 3;
};

// Corridor map: 2 boundaries, 1-3 dividers between them, 0-3 crossing
// rectangles perpendicular to the corridor. Deterministic per seed.
std::vector<MapElement> gen_map(std::uint64_t seed, const MapGenParams& params);

std::vector<Pose2> gen_trajectory(std::uint64_t seed, TrajectoryKind kind, int frames);

// Trajectory first, then a corridor map laid along it, then occluders.
Scenario gen_scenario(std::uint64_t seed, const SynthParams& params, const GridSpec& grid);

// Per-cell class labels in the ego grid at the given pose. Overlap
// precedence: crossing > divider > boundary.
std::vector<std::uint8_t> rasterize(const std::vector<MapElement>& map, const Pose2& pose,
                                    const GridSpec& spec);

struct ObservationFrame {
  Tensor observation;                // kNumClasses x H x W, zeroed under occluders
  std::vector<std::uint8_t> gt_labels;    // H*W
  std::vector<std::uint8_t> visibility;   // H*W, 0 under occluders
};

ObservationFrame observe(const std::vector<std::uint8_t>& gt_labels, const GridSpec& spec,
                         int frame_idx, const std::vector<Occluder>& occluders,
                         std::uint64_t noise_seed, double sigma);

// All frames of a scenario (rasterize + observe), deterministic.
std::vector<ObservationFrame> render_scenario(const Scenario& s, std::uint64_t seed,
                                              double sigma);

// Random cut in [2, len-2]; both halves keep >= 2 frames. Throws DataError
// when the input is shorter than 4 frames.
std::pair<int, int> split_sequence(int length, std::uint64_t seed);

// JSON serialization (schema documented in docs/scenario_format.md).
std::string scenario_to_json(const Scenario& s);
Scenario scenario_from_json(const std::string& json_text);
void save_scenario(const Scenario& s, const std::string& path);
Scenario load_scenario(const std::string& path);

BEVMEM_NS_END
