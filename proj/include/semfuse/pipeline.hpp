#pragma once

#include <optional>
#include <string>
#include <vector>

#include "semfuse/frames.hpp"
#include "semfuse/fusion.hpp"
#include "semfuse/glfs.hpp"
#include "semfuse/map_io.hpp"
#include "semfuse/observation_cache.hpp"
#include "semfuse/scaling.hpp"
#include "semfuse/tsdf.hpp"

namespace semfuse {

struct FuseOptions {
  FusionConfig fusion;
  WeightScheme weights;
  ScalingParams scaling;           // applied to logits before fusion
  std::optional<GlfsParams> glfs;  // required by the glfs strategy
  double truncation = 0.0;         // <= 0: 4 voxel sizes
  bool build_cache = false;
  std::string calibration = "none";  // label copied into the map metadata
};

struct FuseResult {
  VoxelMap map;
  ObservationCache cache;  // labelled surface voxels; empty unless requested
  std::size_t observations = 0;
};

/// Grid over the scene bounds, or over the back-projected depth (+0.2 m)
/// when the scene carries none.
VoxelGrid make_scene_grid(const Scene& scene, double truncation = 0.0);

/// Integrates every frame, fuses semantics and exports the surface voxels
/// that received semantic evidence. Ground truth comes from the label images
/// when all frames carry them.
FuseResult run_fuse(const Scene& scene, const FuseOptions& options);

struct EvaluateOptions {
  int bins = 15;
  int pixel_stride = 4;
  ScalingParams pixel_scaling;  // applied to the scene logits for pixel metrics
};

struct Evaluation {
  MetricsReport report;
  std::vector<ReliabilityTable> voxel_tables;  // none, predicted, ground truth
  std::vector<ReliabilityTable> pixel_tables;
};

/// Voxel metrics from the map; pixel metrics too when a scene is given.
Evaluation evaluate(const VoxelMap& map, const Scene* scene, const EvaluateOptions& options);

}  // namespace semfuse
