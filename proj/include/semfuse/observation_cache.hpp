#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "semfuse/fusion.hpp"

namespace semfuse {

/// Read-only view of one voxel's observations in flat storage.
struct ObservationSpan {
  int class_count = 0;
  std::span<const float> logits;  // size() * K, class fastest
  std::span<const float> distance;
  std::span<const float> incidence_cos;

  std::size_t size() const { return distance.size(); }
  std::span<const float> logits_of(std::size_t t) const {
    const auto k = static_cast<std::size_t>(class_count);
    return logits.subspan(t * k, k);
  }
};

/// Flattened copy of a record list, for building spans in tests and tools.
struct ObservationBuffer {
  int class_count = 0;
  std::vector<float> logits;
  std::vector<float> distance;
  std::vector<float> incidence_cos;

  static ObservationBuffer from_records(std::span<const ObservationRecord> records,
                                        int class_count);
  ObservationSpan view() const {
    return {class_count, logits, distance, incidence_cos};
  }
};

/// Per-voxel observation lists plus ground-truth labels, cached at fusion
/// time so fusion can be re-run under different logit scalings.
class ObservationCache {
 public:
  ObservationCache() = default;
  explicit ObservationCache(int class_count) : class_count_(class_count) {}

  /// Records must be non-empty, each with K logits; gt ∈ [0, K).
  void add_voxel(std::uint64_t voxel_id, int gt_label,
                 std::span<const ObservationRecord> records);
  // Flat-storage overload; logits has frames.size() * K entries.
  void add_voxel(std::uint64_t voxel_id, int gt_label, std::span<const float> logits,
                 std::span<const float> distance, std::span<const float> incidence_cos,
                 std::span<const std::uint32_t> frames);

  int class_count() const { return class_count_; }
  std::size_t voxel_count() const { return gt_.size(); }
  std::size_t observation_count() const { return distance_.size(); }
  bool empty() const { return gt_.empty(); }

  ObservationSpan voxel(std::size_t i) const;
  int gt_label(std::size_t i) const { return gt_[i]; }
  std::uint64_t voxel_id(std::size_t i) const { return voxel_ids_[i]; }
  std::span<const std::uint32_t> frames(std::size_t i) const;
  std::vector<ObservationRecord> records(std::size_t i) const;

  /// Number of distinct ground-truth classes.
  int distinct_labels() const;

  /// Uniform random subset of at most `max_voxels` entries (order preserved).
  ObservationCache subsample(std::size_t max_voxels, std::uint64_t seed) const;
  /// Concatenation; class counts must match.
  void append(const ObservationCache& other);

  std::vector<std::string>& provenance() { return provenance_; }
  const std::vector<std::string>& provenance() const { return provenance_; }
  std::uint64_t subsample_seed() const { return subsample_seed_; }

  void save(const std::filesystem::path& path) const;
  static ObservationCache load(const std::filesystem::path& path);

 private:
  int class_count_ = 0;
  std::vector<std::size_t> offsets_{0};
  std::vector<std::int32_t> gt_;
  std::vector<std::uint64_t> voxel_ids_;
  std::vector<float> logits_;
  std::vector<float> distance_;
  std::vector<float> incidence_;
  std::vector<std::uint32_t> frames_;
  std::vector<std::string> provenance_;
  std::uint64_t subsample_seed_ = 0;
};

}  // namespace semfuse
