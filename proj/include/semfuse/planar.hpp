#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Core>

namespace semfuse {

/// A finalized surface voxel as seen by the top-down projection.
struct PlanarVoxel {
  Eigen::Vector3d center = Eigen::Vector3d::Zero();
  int label = 0;            // predicted class
  double confidence = 0.0;  // its fused probability
};

struct PlanarConfig {
  double cell_size = 0.05;
  double z_min = 0.1;  // height band of contributing voxels, metres
  double z_max = 2.0;
};

/// Top-down semantic map. Cell (row, col) covers
/// x ∈ origin.x + [col, col+1)·cell_size, y ∈ origin.y + [row, row+1)·cell_size.
class PlanarMap {
 public:
  PlanarMap() = default;
  PlanarMap(Eigen::Vector2d origin, double cell_size, int rows, int cols, int class_count);

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  int class_count() const { return class_count_; }
  double cell_size() const { return cell_size_; }
  const Eigen::Vector2d& origin() const { return origin_; }
  Eigen::Vector2d cell_center(int row, int col) const;

  void add(int row, int col, int cls, double confidence);

  std::uint32_t count(int row, int col, int cls) const;
  /// Mean confidence of class `cls` in the cell; 0 when it has no points.
  double confidence(int row, int col, int cls) const;
  bool known(int row, int col) const;
  /// Class with the highest mean confidence (ties to the smallest id), or -1.
  int top_label(int row, int col) const;
  double top_confidence(int row, int col) const;
  std::size_t populated_cells() const;

 private:
  std::size_t slot(int row, int col, int cls) const;

  Eigen::Vector2d origin_ = Eigen::Vector2d::Zero();
  double cell_size_ = 0.05;
  int rows_ = 0;
  int cols_ = 0;
  int class_count_ = 0;
  std::vector<double> sum_;
  std::vector<std::uint32_t> count_;
};

/// Bins voxels inside the height band by their (x, y) centre under their
/// predicted class. The extent covers every input voxel.
PlanarMap project_to_planar_map(std::span<const PlanarVoxel> voxels, int class_count,
                                const PlanarConfig& config = {});

struct Mask2D {
  int rows = 0;
  int cols = 0;
  std::vector<std::uint8_t> data;  // row-major, 0 or 1

  Mask2D() = default;
  Mask2D(int r, int c) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, 0) {}
  bool at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c] != 0; }
  void set(int r, int c, bool v) { data[static_cast<std::size_t>(r) * cols + c] = v ? 1 : 0; }
  std::size_t count() const;
  bool operator==(const Mask2D&) const = default;
};

/// Cells where class `cls` has mean confidence >= threshold.
Mask2D threshold(const PlanarMap& map, int cls, double threshold);

/// Keeps only the largest 4-connected component. Equal sizes go to the
/// component whose smallest (row, col) is lexicographically first.
Mask2D largest_connected_component(const Mask2D& mask);

}  // namespace semfuse
