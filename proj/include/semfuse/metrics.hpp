#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

namespace semfuse {

/// N labeled predictions over K classes, stored row-major.
class PredictionSet {
 public:
  explicit PredictionSet(int class_count) : class_count_(class_count) {}

  /// Appends one sample. Rows must sum to 1 within 1e-6 and gt ∈ [0, K).
  void add(std::span<const double> probs, int gt);
  void reserve(std::size_t n);

  std::size_t size() const { return gt_.size(); }
  bool empty() const { return gt_.empty(); }
  int class_count() const { return class_count_; }

  std::span<const double> probs(std::size_t i) const;
  int gt(std::size_t i) const { return gt_[i]; }
  int pred(std::size_t i) const { return pred_[i]; }
  double conf(std::size_t i) const { return conf_[i]; }

 private:
  int class_count_;
  std::vector<double> probs_;
  std::vector<int> gt_;
  std::vector<int> pred_;
  std::vector<double> conf_;
};

enum class Conditioning { kNone, kPredictedClass, kGroundTruthClass };
std::string_view to_string(Conditioning c);

struct ReliabilityRow {
  int bin = 0;
  int cond_class = -1;  // -1 when unconditioned
  double conf_sum = 0.0;
  double acc_sum = 0.0;
  std::size_t count = 0;

  double mean_conf() const { return count ? conf_sum / static_cast<double>(count) : 0.0; }
  double mean_acc() const { return count ? acc_sum / static_cast<double>(count) : 0.0; }
};

/// Per-bin (and optionally per-class) confidence/accuracy tallies. Bins are
/// [b/O, (b+1)/O) with the last bin closed. Rows are ordered by class then
/// bin and include empty bins.
struct ReliabilityTable {
  int bins = 0;
  int class_count = 0;
  Conditioning conditioning = Conditioning::kNone;
  std::vector<ReliabilityRow> rows;

  /// Re-aggregates the table into its calibration error: ECE for kNone,
  /// TL-ECE for kPredictedClass, mECE for kGroundTruthClass.
  double calibration_error() const;
};

/// Bin of a confidence value for O bins.
int confidence_bin(double confidence, int bins);

ReliabilityTable reliability_table(const PredictionSet& preds, int bins,
                                   Conditioning conditioning);

double compute_ece(const PredictionSet& preds, int bins = 15);
double compute_tl_ece(const PredictionSet& preds, int bins = 15);
double compute_mece(const PredictionSet& preds, int bins = 15);
double compute_brier(const PredictionSet& preds);
/// Probabilities are floored at 1e-12 before the log.
double compute_nll(const PredictionSet& preds);
/// Mean IoU over classes present in the ground truth.
double compute_miou(const PredictionSet& preds);

struct MetricSummary {
  double ece = 0.0;
  double tl_ece = 0.0;
  double mece = 0.0;
  double brier = 0.0;
  double nll = 0.0;
  double miou = 0.0;
  std::size_t count = 0;
};

MetricSummary summarize(const PredictionSet& preds, int bins = 15);

}  // namespace semfuse
