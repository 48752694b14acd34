#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "semfuse/fusion.hpp"
#include "semfuse/metrics.hpp"
#include "semfuse/observation_cache.hpp"

namespace semfuse {

/// Bin edges of the weight look-up table. Values below the first edge fall in
/// bin 0; the last bin is open-ended.
struct LookupBins {
  std::vector<double> distance_edges;   // D + 1 edges, metres
  std::vector<double> incidence_edges;  // A + 1 edges over cos(angle)

  /// 8 uniform distance bins over [0, 5] m and 4 uniform bins over cos ∈ [0, 1].
  static LookupBins defaults();

  int distance_bins() const { return static_cast<int>(distance_edges.size()) - 1; }
  int incidence_bins() const { return static_cast<int>(incidence_edges.size()) - 1; }
  int distance_bin(double distance) const;
  int incidence_bin(double incidence_cos) const;
};

/// Trainable parameters θ = (τ, G, ε, M), stored unconstrained:
/// τ_k = exp(log_tau_k), G = sigmoid(gate_logit), ε = sigmoid(epsilon_logit),
/// M = softplus(table_raw). Logits of ±inf give exact 0/1 gates.
struct GlfsParams {
  int class_count = 0;
  bool scalar_tau = false;
  std::vector<double> log_tau;
  double gate_logit = 0.0;
  double epsilon_logit = 0.0;
  std::vector<double> table_raw;  // K × D × A, incidence fastest
  LookupBins bins;

  /// τ ≡ 1, M ≡ 1 and the given gates in [0, 1].
  static GlfsParams make(int class_count, double gate, double epsilon,
                         LookupBins bins = LookupBins::defaults(), bool scalar_tau = false);

  double tau(std::size_t k) const;
  double gate() const;
  double epsilon() const;
  std::size_t table_index(int cls, int distance_bin, int incidence_bin) const;
  double table_weight(std::size_t index) const;

  /// Flat parameter vector: [log_tau…, gate_logit, epsilon_logit, table_raw…].
  std::size_t parameter_count() const;
  std::vector<double> flatten() const;
  void unflatten(std::span<const double> values);

  /// Throws std::invalid_argument on inconsistent shapes or NaN entries.
  void validate() const;
};

/// Generalized fusion of one voxel's observations. Throws on empty input.
ClassDistribution glfs_fuse(const ObservationSpan& obs, const GlfsParams& params,
                            double laplace_alpha = 1e-3);
ClassDistribution glfs_fuse(std::span<const ObservationRecord> obs, const GlfsParams& params,
                            double laplace_alpha = 1e-3);

/// Soft-binned mECE. Each sample's bin membership is a difference of
/// sigmoids of width `sharpness` around the inner bin edges; it tends to
/// compute_mece as sharpness → 0.
double compute_mdece(const PredictionSet& preds, int bins, double sharpness);

struct TrainerConfig {
  double eta = 1.0;          // weight of the calibration term
  int bins = 15;
  double sharpness = 0.01;   // soft-bin width
  double learning_rate = 0.05;
  int epochs = 200;
  std::size_t batch_size = 4096;
  std::uint64_t seed = 0;
  std::size_t max_entries = 500000;
  double laplace_alpha = 1e-3;
};

/// Loss η·mDECE + NLL over the selected cache entries (all when `subset` is
/// empty). When `gradient` is non-null it receives dL/dθ in flattened order.
double glfs_loss_and_gradient(const ObservationCache& cache, const GlfsParams& params,
                              const TrainerConfig& config,
                              std::span<const std::size_t> subset = {},
                              std::vector<double>* gradient = nullptr);

/// Full-cache loss. Throws on an empty cache.
double glfs_loss(const ObservationCache& cache, const GlfsParams& params,
                 const TrainerConfig& config);

/// Fused predictions for every cache entry.
PredictionSet glfs_predictions(const ObservationCache& cache, const GlfsParams& params,
                               double laplace_alpha = 1e-3);

struct TrainingResult {
  GlfsParams params;
  std::vector<double> loss_history;  // full-cache loss; [0] is the initial loss
  int best_epoch = 0;
};

/// Minibatch gradient descent on the unconstrained parameters. Returns the
/// parameters of the epoch with the lowest full-cache loss. Throws when the
/// cache has fewer than two ground-truth classes or the loss becomes NaN.
TrainingResult train_glfs(const ObservationCache& cache, const GlfsParams& init,
                          const TrainerConfig& config);

}  // namespace semfuse
