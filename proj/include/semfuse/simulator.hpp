#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "semfuse/frames.hpp"

namespace semfuse {

/// Ground-truth label written for pixels whose ray hits nothing.
inline constexpr std::uint16_t kVoidLabel = 0xFFFF;

struct SimBox {
  Eigen::Vector3d min = Eigen::Vector3d::Zero();
  Eigen::Vector3d max = Eigen::Vector3d::Zero();
  int class_id = 0;
};

/// Infinite axis-aligned plane {p : p[axis] = offset}.
struct SimPlane {
  int axis = 2;
  double offset = 0.0;
  int class_id = 0;
};

/// Closed room [0, size] seen from inside: floor at z = 0, ceiling at z = size.z.
struct RoomSpec {
  bool enabled = true;
  Eigen::Vector3d size{6.0, 4.0, 3.0};
  int floor_class = 0;
  int wall_class = 1;
  int ceiling_class = 1;
};

/// Camera positions inside the disc linger `multiplier` times longer.
struct DwellRegion {
  Eigen::Vector2d center = Eigen::Vector2d::Zero();
  double radius = 0.0;
  double multiplier = 1.0;
};

enum class TrajectoryKind { kOrbit, kRandomWalk };

struct TrajectorySpec {
  TrajectoryKind kind = TrajectoryKind::kOrbit;
  int frames = 60;
  Eigen::Vector2d center{3.0, 2.0};  // orbit centre and look-at point
  double radius = 1.8;
  double height = 1.4;
  double height_jitter = 0.15;
  double look_at_height = 0.3;
  double look_jitter = 0.15;  // metres, random look-at offset
  // Random walk only.
  Eigen::Vector3d start{1.0, 1.0, 1.4};
  double step = 0.15;
  std::vector<DwellRegion> dwell;
};

struct SceneSpec {
  std::uint64_t seed = 7;
  int class_count = 4;
  std::vector<std::string> class_names;
  RoomSpec room;
  std::vector<SimBox> boxes;
  std::vector<SimPlane> planes;
  double voxel_size = 0.05;
  double margin = 0.2;  // grid padding around the geometry
  int width = 320;
  int height = 240;
  double hfov_deg = 60.0;  // used when fx is 0
  double fx = 0.0, fy = 0.0, cx = 0.0, cy = 0.0;
  TrajectorySpec trajectory;

  Intrinsics intrinsics() const;
  /// Axis-aligned extent of the geometry plus margin.
  std::pair<Eigen::Vector3d, Eigen::Vector3d> bounds() const;
  /// Throws std::invalid_argument on violated invariants.
  void validate() const;
};

/// Flips the favoured class to `to_class` (with `probability`) when the
/// pixel's true class matches `from_class` (-1 = any), its incidence cosine is
/// at most `max_incidence_cos`, and the camera lies inside the region disc
/// (radius <= 0 = anywhere).
struct ViewBias {
  int from_class = -1;
  int to_class = 0;
  double max_incidence_cos = 1.0;
  Eigen::Vector2d region_center = Eigen::Vector2d::Zero();
  double region_radius = 0.0;
  double probability = 1.0;
};

struct SegmenterSpec {
  std::vector<std::vector<double>> confusion;  // K × K, row-stochastic
  double tau_star = 1.0;            // logits are divided by this
  double confidence_spread = 0.0;   // per-pixel jitter of the diagonal confidence
  double correlation = 0.0;         // share of pixels whose draw is tied to the surface location
  double correlation_cell = 0.1;    // metres
  double outlier_rate = 0.0;
  double outlier_confidence = 0.99;
  double noise = 0.0;               // Gaussian std on logits before τ*
  std::vector<ViewBias> view_bias;

  static SegmenterSpec symmetric(int class_count, double diagonal);
  void validate(int class_count) const;
};

struct PixelContext {
  int gt_class = 0;
  Eigen::Vector3d world_point = Eigen::Vector3d::Zero();
  Eigen::Vector3d camera_position = Eigen::Vector3d::Zero();
  double incidence_cos = 1.0;
};

/// Emulated network output for one pixel. Location-correlated draws are keyed
/// by `seed` and the surface cell; the rest come from `rng`.
std::vector<float> emulate_segmentation(const PixelContext& ctx, const SegmenterSpec& seg,
                                        std::uint64_t seed, std::mt19937_64& rng);

struct RayHit {
  double t = 0.0;
  int class_id = 0;
  Eigen::Vector3d normal = Eigen::Vector3d::Zero();
};

/// Nearest surface along origin + t·dir with t > 0.
std::optional<RayHit> cast_ray(const SceneSpec& spec, const Eigen::Vector3d& origin,
                               const Eigen::Vector3d& dir);

/// Camera-to-world pose at `position` looking at `target` (z forward, y down).
Eigen::Matrix4d look_at(const Eigen::Vector3d& position, const Eigen::Vector3d& target);

std::vector<Eigen::Matrix4d> generate_trajectory(const SceneSpec& spec);

/// Renders every frame in memory (depth, logits, labels).
Scene render_scene(const SceneSpec& spec, const SegmenterSpec& seg);

struct GtVoxel {
  int ix = 0, iy = 0, iz = 0;
  int label = 0;
  double distance = 0.0;  // voxel centre to the labelled surface
};

/// Voxels of the grid over spec.bounds() whose centre lies within one voxel
/// size of a surface, labelled with the nearest surface's class.
std::vector<GtVoxel> exact_voxel_labels(const SceneSpec& spec);

/// Renders and writes the scene directory plus gt_voxels.csv.
Scene generate_scene(const SceneSpec& spec, const SegmenterSpec& seg,
                     const std::filesystem::path& out);

/// Room 6×4×3 m, floor / wall / box-A / box-B, 5 cm voxels, 320×240, 60 orbit
/// frames, seed 7.
SceneSpec standard_fixture();
SegmenterSpec standard_segmenter(double tau_star = 0.5, double outlier_rate = 0.02);

struct SimulationSpec {
  SceneSpec scene;
  SegmenterSpec segmenter;
};

/// JSON document with "scene" and "segmenter" objects; absent keys keep the
/// standard-fixture defaults. Unknown keys are rejected.
SimulationSpec parse_simulation_spec(const std::string& json_text);
SimulationSpec load_simulation_spec(const std::filesystem::path& path);
/// Fully resolved spec in the same schema.
std::string simulation_spec_to_json(const SimulationSpec& spec);

}  // namespace semfuse
