#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace semfuse {

using ClassDistribution = std::vector<double>;

enum class FusionStrategy {
  kRbu,
  kHistogram,
  kNaiveAveraging,
  kGeometricMean,
  kGlfs,
};

// CLI spellings: rbu, hist, avg, geomean, glfs.
std::string_view to_string(FusionStrategy s);
FusionStrategy parse_fusion_strategy(std::string_view name);

/// Gates of the generalized strategy. (1,1) is RBU, (1,0) the geometric mean
/// and (0,0) naive averaging.
struct FusionGates {
  double gate = 1.0;     // G: geometric vs arithmetic branch
  double epsilon = 1.0;  // ε: RBU vs geometric-mean exponent
};

struct FusionConfig {
  FusionStrategy strategy = FusionStrategy::kRbu;
  double laplace_alpha = 1e-3;
  FusionGates gates;  // only read by kGlfs
};

/// s'_k = (s_k + alpha) / (1 + K alpha). Throws on alpha <= 0.
ClassDistribution laplace_smooth(std::span<const double> s, double alpha);

/// Throws std::invalid_argument unless entries are >= 0 and sum to 1 within tol.
void check_distribution(std::span<const double> s, double tol = 1e-6);

/// argmax with ties resolved to the smallest class id.
int argmax(std::span<const double> s);

/// Numerically safe softmax (max subtraction).
ClassDistribution softmax(std::span<const double> x);

// ---------------------------------------------------------------------------
// Observation weighting

enum class WeightKind { kConstant, kNormalDistance, kQuadraticDistance };

std::string_view to_string(WeightKind k);
// CLI spellings: const, normal-dist, quad-dist.
WeightKind parse_weight_kind(std::string_view name);

struct WeightScheme {
  WeightKind kind = WeightKind::kConstant;
  double floor = 0.05;
  double reference_distance = 1.0;  // NormalDistance: d_ref
  double optimal_distance = 1.5;    // QuadraticDistance: d_opt
  double radius = 2.0;              // QuadraticDistance: r
};

/// Per-voxel, per-frame feature record. Logits are the raw segmentation
/// output at the voxel's pixel.
struct ObservationRecord {
  std::vector<float> logits;
  float distance = 1.0f;       // camera-to-voxel distance, m
  float incidence_cos = 1.0f;  // cos of angle between view ray and surface normal
  std::uint32_t frame_index = 0;
};

/// Weight in (0, 1].
double sample_weight(double distance, double incidence_cos, const WeightScheme& scheme);
inline double sample_weight(const ObservationRecord& rec, const WeightScheme& scheme) {
  return sample_weight(rec.distance, rec.incidence_cos, scheme);
}

// ---------------------------------------------------------------------------
// Accumulation kernels shared by the per-voxel accumulator and the dense map.
// `log_sum` holds Σ w·ln smooth(s), `lin_sum` holds Σ w·s (or the vote counts
// for the histogram strategy). Either span may be empty when the strategy
// does not use it.

namespace kernels {

bool uses_log_sum(FusionStrategy s);
bool uses_lin_sum(FusionStrategy s);

void accumulate(const FusionConfig& cfg, std::span<const double> probs, double weight,
                std::span<double> log_sum, std::span<double> lin_sum);

void finalize(const FusionConfig& cfg, std::span<const double> log_sum,
              std::span<const double> lin_sum, double weight_sum,
              std::uint32_t obs_count, std::span<double> out);

}  // namespace kernels

/// Running fusion state of a single voxel. Stores sums, not observations,
/// unless caching is enabled.
class SemanticAccumulator {
 public:
  SemanticAccumulator(int class_count, FusionConfig config, bool caching = false);

  /// Adds one likelihood observation with weight w > 0. Throws on an invalid
  /// distribution or weight.
  void observe(std::span<const double> probs, double weight = 1.0);
  /// Same, additionally appending `record` to the cache when caching is on.
  void observe(std::span<const double> probs, double weight,
               const ObservationRecord& record);

  /// Throws std::logic_error when nothing has been observed.
  ClassDistribution finalize() const;

  int class_count() const { return class_count_; }
  const FusionConfig& config() const { return config_; }
  std::span<const double> log_sum() const { return log_sum_; }
  std::span<const double> lin_sum() const { return lin_sum_; }
  // Histogram vote counts (the histogram strategy keeps them in lin_sum).
  std::span<const double> votes() const { return lin_sum_; }
  double weight_sum() const { return weight_sum_; }
  std::uint32_t obs_count() const { return obs_count_; }
  bool caching() const { return caching_; }
  const std::vector<ObservationRecord>& cache() const { return cache_; }

 private:
  int class_count_;
  FusionConfig config_;
  bool caching_;
  std::vector<double> log_sum_;
  std::vector<double> lin_sum_;
  double weight_sum_ = 0.0;
  std::uint32_t obs_count_ = 0;
  std::vector<ObservationRecord> cache_;
};

/// Dense semantic layer: one accumulator per voxel in flat storage. Distinct
/// voxels may be observed concurrently.
class SemanticMap {
 public:
  SemanticMap(std::size_t voxel_count, int class_count, FusionConfig config);

  // No validation on this path; callers pass softmax outputs.
  void observe(std::size_t voxel, std::span<const double> probs, double weight);

  std::uint32_t obs_count(std::size_t voxel) const { return obs_count_[voxel]; }
  double weight_sum(std::size_t voxel) const { return weight_sum_[voxel]; }
  /// Throws std::logic_error for a voxel without observations.
  ClassDistribution finalize(std::size_t voxel) const;

  std::size_t voxel_count() const { return obs_count_.size(); }
  int class_count() const { return class_count_; }
  const FusionConfig& config() const { return config_; }

 private:
  std::span<double> log_row(std::size_t voxel);
  std::span<double> lin_row(std::size_t voxel);

  int class_count_;
  FusionConfig config_;
  std::vector<double> log_sum_;
  std::vector<double> lin_sum_;
  std::vector<double> weight_sum_;
  std::vector<std::uint32_t> obs_count_;
};

}  // namespace semfuse
