#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "macp/geom.hpp"

namespace macp::scenario {

struct SensorConfig {
  int beams = 720;
  double max_range = 40.0;
  double range_noise = 0.02;   ///< sigma in meters
  double angular_noise = 0.0;  ///< sigma in radians
  double dropout = 0.02;       ///< per-ray drop probability
};

struct WorldConfig {
  double half_x = 60.0, half_y = 30.0;  ///< 120 x 60 m field
  int min_objects = 8, max_objects = 24;
  int min_agents = 2, max_agents = 7;
  double ego_jitter = 5.0;  ///< ego spawns within +-jitter of the field center
  double partner_min = 8.0, partner_max = 30.0;
  double heading_jitter = 0.3;  ///< around the two lane directions 0 and pi
  double spawn_margin = 0.5;    ///< clearance between spawned boxes
  int max_retries = 4000;
  double eval_half = 32.0;  ///< ground truth kept when |x|, |y| < eval_half in the ego frame
  SensorConfig sensor;

  void validate() const;
  static WorldConfig single_agent();
  /// Dense traffic used for the cooperative splits.
  static WorldConfig occlusion_heavy();
};

nlohmann::json to_json(const WorldConfig& cfg);
/// Overrides fields of `base` with those present in `j`; unknown keys are errors.
WorldConfig world_config_from_json(const nlohmann::json& j, WorldConfig base);

struct Agent {
  std::uint32_t id = 0;
  std::size_t object = 0;  ///< index of the agent's own vehicle body
  Pose2D pose;
};

struct World {
  std::uint64_t seed = 0;
  WorldConfig cfg;
  std::vector<Box2D> objects;
  std::vector<Agent> agents;  ///< agents[0] is the ego
};

World gen_world(std::uint64_t seed, const WorldConfig& cfg);

/// Distance along the unit ray (ox, oy) + t (dx, dy) to the rectangle, or +inf.
double ray_box_distance(Vec2 origin, Vec2 dir, const Box2D& box);

/// Scan in the agent's own frame. `hit_object` (optional) receives the object index of every point.
PointCloud lidar_scan(const World& world, std::size_t agent, std::vector<int>* hit_object = nullptr);

enum class Kind { single, cooperative };
const char* kind_name(Kind k);
Kind parse_kind(const std::string& s);

struct Frame {
  std::uint64_t seed = 0;
  std::vector<std::uint32_t> agent_ids;  ///< [0] is the ego
  std::vector<Pose2D> poses;             ///< world frame
  std::vector<PointCloud> clouds;        ///< each in its agent's frame
  std::vector<Box2D> gts;                ///< ego frame, yaw in (-pi/2, pi/2]
  std::vector<Box2D> ego_visible_gts;    ///< subset seen by the ego's own scan

  std::size_t n_agents() const { return clouds.size(); }
};

std::uint64_t frame_seed(std::uint64_t seed, std::uint64_t index);
Frame make_frame(Kind kind, std::uint64_t seed, const WorldConfig& cfg);
std::vector<Frame> make_dataset(Kind kind, int n_frames, std::uint64_t seed, const WorldConfig& cfg);

/// Drops points inside the axis-aligned square of half side `half_extent` around `center`.
PointCloud mask_fov(const PointCloud& cloud, Vec2 center, double half_extent);

struct Histogram {
  double lo = 0, hi = 0;
  std::vector<std::int64_t> counts;

  double bin_width() const { return (hi - lo) / static_cast<double>(counts.size()); }
};

/// Signed ego distance: |p| with the sign of the ego-heading dot product (>= 0 counts as +).
double signed_range(Vec2 p_in_ego);

struct RangeHistograms {
  Histogram ego, surrounding;
};

RangeHistograms signed_range_histogram(const std::vector<Frame>& frames, int bins, double max_range = 64.0);
std::string histogram_csv(const RangeHistograms& h);

// Dataset directory: manifest.json, frame_NNNNN_agent_K.pc clouds, frame_NNNNN_gt.jsonl.
struct Dataset {
  Kind kind = Kind::single;
  std::uint64_t seed = 0;
  WorldConfig cfg;
  std::vector<Frame> frames;
};

void write_dataset(const std::filesystem::path& dir, const Dataset& ds);
Dataset read_dataset(const std::filesystem::path& dir);

std::string boxes_to_jsonl(const std::vector<Box2D>& boxes);
std::vector<Box2D> boxes_from_jsonl(const std::string& text);

}  // namespace macp::scenario
