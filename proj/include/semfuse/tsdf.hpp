#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "semfuse/frames.hpp"
#include "semfuse/fusion.hpp"

namespace semfuse {

/// Dense TSDF volume. Storage is structure-of-arrays indexed by the linear
/// voxel index ix + dims[0]*(iy + dims[1]*iz).
class VoxelGrid {
 public:
  static constexpr std::int16_t kUnlabeled = -1;

  /// truncation <= 0 selects the default 4 * voxel_size.
  VoxelGrid(const Eigen::Vector3d& origin, double voxel_size,
            const std::array<int, 3>& dims, double truncation = 0.0);

  /// Grid covering [min, max] (rounded outwards to whole voxels).
  static VoxelGrid from_bounds(const Eigen::Vector3d& min, const Eigen::Vector3d& max,
                               double voxel_size, double truncation = 0.0);

  std::size_t size() const { return sdf_.size(); }
  const Eigen::Vector3d& origin() const { return origin_; }
  double voxel_size() const { return voxel_size_; }
  double truncation() const { return truncation_; }
  const std::array<int, 3>& dims() const { return dims_; }

  std::size_t linear_index(int ix, int iy, int iz) const {
    return static_cast<std::size_t>(ix) +
           static_cast<std::size_t>(dims_[0]) *
               (static_cast<std::size_t>(iy) +
                static_cast<std::size_t>(dims_[1]) * static_cast<std::size_t>(iz));
  }
  std::array<int, 3> coords(std::size_t index) const;
  Eigen::Vector3d center(std::size_t index) const;

  float sdf(std::size_t i) const { return sdf_[i]; }
  float weight(std::size_t i) const { return weight_[i]; }
  std::int16_t gt_label(std::size_t i) const { return gt_label_[i]; }
  bool has_color() const { return !color_.empty(); }
  std::array<float, 3> color(std::size_t i) const;

  // Low-level mutable access for the integrator and tests.
  std::vector<float>& sdf_data() { return sdf_; }
  std::vector<float>& weight_data() { return weight_; }
  std::vector<std::int16_t>& gt_label_data() { return gt_label_; }
  std::vector<float>& color_data();  // allocates on first use

 private:
  Eigen::Vector3d origin_;
  double voxel_size_;
  std::array<int, 3> dims_;
  double truncation_;
  std::vector<float> sdf_;
  std::vector<float> weight_;
  std::vector<std::int16_t> gt_label_;
  std::vector<float> color_;
};

struct IntegrationConfig {
  WeightScheme weights;  // geometric weight w_t; constant by default
  // Semantic evidence is associated only when |δ_t| <= semantic_band;
  // <= 0 selects voxel_size.
  double semantic_band = 0.0;
};

/// Receives every (voxel, pixel) association inside the semantic band during
/// integration. Called concurrently for distinct voxels.
class ObservationSink {
 public:
  virtual ~ObservationSink() = default;
  virtual void observe(std::size_t voxel, std::size_t pixel, float distance,
                       float incidence_cos) = 0;
};

/// Per-pixel unit surface normals (camera frame, facing the camera) from a
/// depth image by central differences. Pixels without valid neighbours get
/// the reversed viewing ray.
std::vector<Eigen::Vector3f> estimate_depth_normals(std::span<const float> depth,
                                                    const Intrinsics& intr);

/// Integrates one depth frame by incremental weighted averaging. Returns the
/// number of voxels updated.
std::size_t integrate_depth_frame(VoxelGrid& grid, const Intrinsics& intr, const Frame& frame,
                                  const IntegrationConfig& config = {},
                                  ObservationSink* sink = nullptr);

/// Observed voxels with |sdf| < band (default voxel_size), ascending index.
std::vector<std::size_t> extract_surface_voxels(const VoxelGrid& grid, double band = 0.0);

/// Majority vote of projected ground-truth pixels for each listed voxel,
/// using the semantic-band visibility rule. Ties go to the smallest class id;
/// voxels without votes stay unlabeled. Returns the number labeled.
std::size_t assign_ground_truth(VoxelGrid& grid, const Scene& scene,
                                std::span<const std::size_t> voxels,
                                double semantic_band = 0.0);

}  // namespace semfuse
