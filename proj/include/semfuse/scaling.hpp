#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "semfuse/frames.hpp"
#include "semfuse/fusion.hpp"
#include "semfuse/metrics.hpp"
#include "semfuse/observation_cache.hpp"

namespace semfuse {

enum class ScalingMode { kTemperature, kVector };
std::string_view to_string(ScalingMode m);  // temp | vector
ScalingMode parse_scaling_mode(std::string_view name);

struct ScalingParams {
  ScalingMode mode = ScalingMode::kTemperature;
  std::vector<double> tau{1.0};  // one entry for temperature, K for vector

  static ScalingParams identity() { return {}; }
  static ScalingParams temperature(double t) { return {ScalingMode::kTemperature, {t}}; }
  static ScalingParams vector(std::vector<double> t) {
    return {ScalingMode::kVector, std::move(t)};
  }

  double tau_for(std::size_t k) const {
    return mode == ScalingMode::kTemperature ? tau[0] : tau[k];
  }
  /// Throws std::invalid_argument unless every τ is finite and > 0 and the
  /// vector length matches K.
  void validate(int class_count) const;
};

/// softmax(λ_k / τ_k).
void scale_logits_into(std::span<const float> logits, const ScalingParams& params,
                       std::span<double> out);
ClassDistribution scale_logits(std::span<const float> logits, const ScalingParams& params);
ClassDistribution scale_logits(std::span<const double> logits, const ScalingParams& params);

enum class CalibrationMetric { kMece, kEce, kTlEce };
std::string_view to_string(CalibrationMetric m);  // mece | ece | tl-ece
CalibrationMetric parse_calibration_metric(std::string_view name);
double evaluate_metric(const PredictionSet& preds, CalibrationMetric metric, int bins);

struct CalibrationObjective {
  CalibrationMetric metric = CalibrationMetric::kMece;
  int bins = 15;
  int pixel_stride = 8;  // 2D only: every n-th pixel per axis
  FusionConfig fusion;   // 3D only
  WeightScheme weights;  // 3D only
};

struct SearchOptions {
  int sweep_count = 50;
  double tau_min = 0.01;
  double tau_max = 200.0;
  double tolerance = 1e-4;
  int max_refine_evaluations = 200;
  int random_samples = 30;      // vector mode
  int diagonal_samples = 21;    // vector mode
  double vector_box = 0.5;      // τ_k within ±50% of the best scalar τ
  std::uint64_t seed = 0;
};

struct CalibrationResult {
  ScalingParams params;
  double objective = 0.0;
  double identity_objective = 0.0;  // Ω at τ = 1
  int evaluations = 0;
};

struct NelderMeadResult {
  std::vector<double> x;
  double value = 0.0;
  int evaluations = 0;
};

/// Derivative-free simplex minimizer. Stops when the simplex value spread
/// drops below `tolerance` or after `max_evaluations` calls. NaN values are
/// treated as +inf.
NelderMeadResult nelder_mead(const std::function<double(std::span<const double>)>& f,
                             std::vector<double> x0, std::vector<double> step,
                             double tolerance, int max_evaluations);

using ScalingObjective = std::function<double(const ScalingParams&)>;

/// Log-spaced temperature sweep plus simplex refinement in log τ; vector mode
/// then searches the box around the best temperature. The identity τ = 1 is
/// always evaluated, so the result never scores worse than it.
CalibrationResult optimize_scaling(const ScalingObjective& objective, int class_count,
                                   ScalingMode mode, const SearchOptions& options = {});

/// Subsampled labeled pixels pooled over scenes.
class PixelObjective {
 public:
  PixelObjective(std::span<const Scene> scenes, const CalibrationObjective& objective);
  PredictionSet predictions(const ScalingParams& params) const;
  double operator()(const ScalingParams& params) const;
  std::size_t pixel_count() const { return gt_.size(); }
  int class_count() const { return class_count_; }

 private:
  int class_count_ = 0;
  CalibrationObjective objective_;
  std::vector<float> logits_;
  std::vector<int> gt_;
};

/// Re-fuses every cached voxel under scaled logits.
PredictionSet fuse_cache(const ObservationCache& cache, const ScalingParams& params,
                         const FusionConfig& fusion, const WeightScheme& weights);

/// Mean Ω over caches of the re-fused voxel predictions.
class VoxelObjective {
 public:
  VoxelObjective(std::span<const ObservationCache> caches, const CalibrationObjective& objective);
  double operator()(const ScalingParams& params) const;

 private:
  std::span<const ObservationCache> caches_;
  CalibrationObjective objective_;
};

CalibrationResult calibrate_2d(std::span<const Scene> scenes, const CalibrationObjective& objective,
                               ScalingMode mode, const SearchOptions& options = {});

CalibrationResult calibrate_3d(std::span<const ObservationCache> caches,
                               const CalibrationObjective& objective, ScalingMode mode,
                               const SearchOptions& options = {});

}  // namespace semfuse
