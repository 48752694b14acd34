#include "semfuse/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "semfuse/fusion.hpp"

namespace semfuse {

void PredictionSet::add(std::span<const double> probs, int gt) {
  if (probs.size() != static_cast<std::size_t>(class_count_)) {
    throw std::invalid_argument("PredictionSet: row has wrong class count");
  }
  if (gt < 0 || gt >= class_count_) {
    throw std::invalid_argument("PredictionSet: ground-truth label " + std::to_string(gt) +
                                " out of range");
  }
  check_distribution(probs, 1e-6);
  const int p = argmax(probs);
  probs_.insert(probs_.end(), probs.begin(), probs.end());
  gt_.push_back(gt);
  pred_.push_back(p);
  conf_.push_back(probs[static_cast<std::size_t>(p)]);
}

void PredictionSet::reserve(std::size_t n) {
  probs_.reserve(n * static_cast<std::size_t>(class_count_));
  gt_.reserve(n);
  pred_.reserve(n);
  conf_.reserve(n);
}

std::span<const double> PredictionSet::probs(std::size_t i) const {
  const auto k = static_cast<std::size_t>(class_count_);
  return std::span<const double>(probs_).subspan(i * k, k);
}

std::string_view to_string(Conditioning c) {
  switch (c) {
    case Conditioning::kNone: return "none";
    case Conditioning::kPredictedClass: return "pred-class";
    case Conditioning::kGroundTruthClass: return "gt-class";
  }
  return "unknown";
}

int confidence_bin(double confidence, int bins) {
  const int b = static_cast<int>(std::floor(confidence * bins));
  return std::clamp(b, 0, bins - 1);
}

ReliabilityTable reliability_table(const PredictionSet& preds, int bins,
                                   Conditioning conditioning) {
  if (bins < 1) throw std::invalid_argument("reliability_table: bin count must be >= 1");
  ReliabilityTable table;
  table.bins = bins;
  table.class_count = preds.class_count();
  table.conditioning = conditioning;
  const int groups = conditioning == Conditioning::kNone ? 1 : preds.class_count();
  table.rows.resize(static_cast<std::size_t>(groups) * static_cast<std::size_t>(bins));
  for (int g = 0; g < groups; ++g) {
    for (int b = 0; b < bins; ++b) {
      auto& row = table.rows[static_cast<std::size_t>(g * bins + b)];
      row.bin = b;
      row.cond_class = conditioning == Conditioning::kNone ? -1 : g;
    }
  }
  for (std::size_t i = 0; i < preds.size(); ++i) {
    int g = 0;
    if (conditioning == Conditioning::kPredictedClass) g = preds.pred(i);
    if (conditioning == Conditioning::kGroundTruthClass) g = preds.gt(i);
    const int b = confidence_bin(preds.conf(i), bins);
    auto& row = table.rows[static_cast<std::size_t>(g * bins + b)];
    row.conf_sum += preds.conf(i);
    row.acc_sum += preds.pred(i) == preds.gt(i) ? 1.0 : 0.0;
    ++row.count;
  }
  return table;
}

double ReliabilityTable::calibration_error() const {
  std::size_t total = 0;
  for (const auto& row : rows) total += row.count;
  if (total == 0) throw std::invalid_argument("calibration error of an empty prediction set");

  if (conditioning != Conditioning::kGroundTruthClass) {
    double err = 0.0;
    for (const auto& row : rows) {
      if (row.count == 0) continue;
      err += static_cast<double>(row.count) / static_cast<double>(total) *
             std::abs(row.mean_acc() - row.mean_conf());
    }
    return err;
  }

  // Each present ground-truth class contributes its own ECE with equal weight.
  double sum = 0.0;
  int present = 0;
  const auto b_count = static_cast<std::size_t>(bins);
  for (std::size_t g = 0; g * b_count < rows.size(); ++g) {
    std::size_t class_total = 0;
    for (std::size_t b = 0; b < b_count; ++b) class_total += rows[g * b_count + b].count;
    if (class_total == 0) continue;
    double err = 0.0;
    for (std::size_t b = 0; b < b_count; ++b) {
      const auto& row = rows[g * b_count + b];
      if (row.count == 0) continue;
      err += static_cast<double>(row.count) / static_cast<double>(class_total) *
             std::abs(row.mean_acc() - row.mean_conf());
    }
    sum += err;
    ++present;
  }
  return sum / present;
}

double compute_ece(const PredictionSet& preds, int bins) {
  return reliability_table(preds, bins, Conditioning::kNone).calibration_error();
}

double compute_tl_ece(const PredictionSet& preds, int bins) {
  return reliability_table(preds, bins, Conditioning::kPredictedClass).calibration_error();
}

double compute_mece(const PredictionSet& preds, int bins) {
  if (preds.empty()) throw std::invalid_argument("compute_mece: no labeled samples");
  return reliability_table(preds, bins, Conditioning::kGroundTruthClass).calibration_error();
}

double compute_brier(const PredictionSet& preds) {
  if (preds.empty()) throw std::invalid_argument("compute_brier: empty prediction set");
  double sum = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const auto p = preds.probs(i);
    for (std::size_t k = 0; k < p.size(); ++k) {
      const double target = static_cast<int>(k) == preds.gt(i) ? 1.0 : 0.0;
      sum += (p[k] - target) * (p[k] - target);
    }
  }
  return sum / static_cast<double>(preds.size());
}

double compute_nll(const PredictionSet& preds) {
  if (preds.empty()) throw std::invalid_argument("compute_nll: empty prediction set");
  double sum = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const double p = preds.probs(i)[static_cast<std::size_t>(preds.gt(i))];
    sum -= std::log(std::max(p, 1e-12));
  }
  return sum / static_cast<double>(preds.size());
}

double compute_miou(const PredictionSet& preds) {
  if (preds.empty()) throw std::invalid_argument("compute_miou: empty prediction set");
  const auto k = static_cast<std::size_t>(preds.class_count());
  std::vector<std::size_t> tp(k, 0), fp(k, 0), fn(k, 0), gt_count(k, 0);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const auto g = static_cast<std::size_t>(preds.gt(i));
    const auto p = static_cast<std::size_t>(preds.pred(i));
    ++gt_count[g];
    if (g == p) {
      ++tp[g];
    } else {
      ++fp[p];
      ++fn[g];
    }
  }
  double sum = 0.0;
  int present = 0;
  for (std::size_t c = 0; c < k; ++c) {
    const std::size_t uni = tp[c] + fp[c] + fn[c];
    if (gt_count[c] == 0 || uni == 0) continue;
    sum += static_cast<double>(tp[c]) / static_cast<double>(uni);
    ++present;
  }
  return sum / present;
}

MetricSummary summarize(const PredictionSet& preds, int bins) {
  MetricSummary s;
  s.ece = compute_ece(preds, bins);
  s.tl_ece = compute_tl_ece(preds, bins);
  s.mece = compute_mece(preds, bins);
  s.brier = compute_brier(preds);
  s.nll = compute_nll(preds);
  s.miou = compute_miou(preds);
  s.count = preds.size();
  return s;
}

}  // namespace semfuse
