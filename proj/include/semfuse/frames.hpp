#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace semfuse {

/// Raised by scene I/O. The message always names the offending file.
class SceneIoError : public std::runtime_error {
 public:
  SceneIoError(const std::filesystem::path& file, const std::string& what)
      : std::runtime_error(file.string() + ": " + what), file_(file) {}
  const std::filesystem::path& file() const { return file_; }

 private:
  std::filesystem::path file_;
};

struct Intrinsics {
  double fx = 0.0;
  double fy = 0.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 0;
  int height = 0;

  std::size_t pixel_count() const {
    return static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
  }
  // Throws std::invalid_argument when the invariants do not hold.
  void validate() const;

  bool operator==(const Intrinsics&) const = default;
};

/// One posed observation. Buffers are row-major; logits are H*W*K with the
/// class index fastest-varying. Optional buffers are empty when absent.
struct Frame {
  std::uint32_t index = 0;
  Eigen::Matrix4d pose = Eigen::Matrix4d::Identity();  // camera-to-world
  std::vector<float> depth;
  std::vector<float> logits;
  std::vector<std::uint16_t> gt_labels;
  std::vector<std::uint8_t> color;

  bool has_gt() const { return !gt_labels.empty(); }
  bool has_color() const { return !color.empty(); }
};

struct Scene {
  Intrinsics intrinsics;
  std::vector<Frame> frames;
  int class_count = 0;
  std::vector<std::string> class_names;
  double voxel_size = 0.05;
  // Axis-aligned grid bounds in world coordinates, if the producer knows them.
  std::optional<Eigen::Vector3d> bounds_min;
  std::optional<Eigen::Vector3d> bounds_max;

  // Checks every frame against the intrinsics and class count. Throws
  // std::invalid_argument describing the first violation.
  void validate() const;
};

struct Projection {
  double u = 0.0;  // continuous column
  double v = 0.0;  // continuous row
  double z = 0.0;  // camera-frame depth
  int col = 0;     // nearest pixel
  int row = 0;
};

/// Pinhole projection of a camera-frame point. Returns nullopt when the point
/// is behind the camera or its nearest pixel falls outside the image.
std::optional<Projection> project_camera_point(const Eigen::Vector3d& p_cam,
                                               const Intrinsics& intr);

/// World point -> pixel through a camera-to-world pose.
std::optional<Projection> project_point(const Eigen::Vector3d& p_world,
                                        const Eigen::Matrix4d& pose,
                                        const Intrinsics& intr);

/// Inverse of project_point for a continuous pixel coordinate and depth.
Eigen::Vector3d back_project(double u, double v, double z,
                             const Eigen::Matrix4d& pose,
                             const Intrinsics& intr);

/// Inverse of a rigid camera-to-world transform.
Eigen::Matrix4d invert_rigid(const Eigen::Matrix4d& pose);

/// Checks RᵀR = I within tol and the bottom row.
bool is_rigid(const Eigen::Matrix4d& pose, double tol = 1e-6);

Scene load_scene(const std::filesystem::path& dir);
void save_scene(const Scene& scene, const std::filesystem::path& dir);

// Zero-padded six digit frame stem, e.g. 000003.
std::string frame_stem(std::uint32_t index);

}  // namespace semfuse
