#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "semfuse/glfs.hpp"
#include "semfuse/metrics.hpp"
#include "semfuse/planar.hpp"
#include "semfuse/scaling.hpp"

namespace semfuse {

/// One exported surface voxel. Probabilities are stored as float32; every
/// consumer (including in-process evaluation) reads these values.
struct VoxelMapEntry {
  std::uint64_t index = 0;
  int ix = 0, iy = 0, iz = 0;
  float sdf = 0.0f;
  float weight = 0.0f;
  int gt_label = -1;  // -1 when unlabeled
  std::vector<float> probs;

  int pred_label() const;
  float confidence() const;
};

struct VoxelMap {
  Eigen::Vector3d origin = Eigen::Vector3d::Zero();
  double voxel_size = 0.05;
  std::array<int, 3> dims{0, 0, 0};
  double truncation = 0.2;
  int class_count = 0;
  std::vector<std::string> class_names;
  std::string fusion = "rbu";
  std::string weights = "const";
  double laplace_alpha = 1e-3;
  std::string calibration = "none";
  std::vector<VoxelMapEntry> voxels;

  Eigen::Vector3d center(const VoxelMapEntry& v) const;
  /// Labelled voxels only.
  PredictionSet predictions() const;
  std::vector<PlanarVoxel> planar_voxels() const;
};

/// map.csv (ix,iy,iz,sdf,weight,gt_label,pred_label,confidence,prob_0..) plus
/// map.json with grid and fusion metadata.
void save_voxel_map(const VoxelMap& map, const std::filesystem::path& dir);
VoxelMap load_voxel_map(const std::filesystem::path& dir);

/// Scaling parameters: {"mode", "tau": [...], "target", ...}.
void save_scaling_params(const ScalingParams& params, const std::string& target,
                         const std::filesystem::path& file, double objective = 0.0,
                         double identity_objective = 0.0, const std::string& metric = "mece");
ScalingParams load_scaling_params(const std::filesystem::path& file);

void save_glfs_params(const GlfsParams& params, const std::filesystem::path& file,
                      const std::vector<double>& loss_history = {}, int best_epoch = 0);
GlfsParams load_glfs_params(const std::filesystem::path& file);

struct MetricsReport {
  std::string fusion;
  std::string calibration;
  int bins = 15;
  MetricSummary voxel;
  std::optional<MetricSummary> pixel;
};

void save_metrics_json(const MetricsReport& report, const std::filesystem::path& file);
MetricsReport load_metrics_json(const std::filesystem::path& file);

/// Columns: conditioning,bin,cond_class,mean_conf,mean_acc,count.
void save_reliability_csv(const std::vector<ReliabilityTable>& tables,
                          const std::filesystem::path& file);

/// One row per report: run,fusion,calibration,<metrics>.
void save_report_csv(const std::vector<std::pair<std::string, MetricsReport>>& rows,
                     const std::filesystem::path& file);

/// x,y,class,confidence for every populated (cell, class).
void save_planar_csv(const PlanarMap& map, const std::filesystem::path& file);
/// Grey-level image of top labels; unknown cells are black.
void save_planar_pgm(const PlanarMap& map, const std::filesystem::path& file);

}  // namespace semfuse
