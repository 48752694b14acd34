#include "semfuse/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace semfuse {

std::string_view to_string(FusionStrategy s) {
  switch (s) {
    case FusionStrategy::kRbu: return "rbu";
    case FusionStrategy::kHistogram: return "hist";
    case FusionStrategy::kNaiveAveraging: return "avg";
    case FusionStrategy::kGeometricMean: return "geomean";
    case FusionStrategy::kGlfs: return "glfs";
  }
  return "unknown";
}

FusionStrategy parse_fusion_strategy(std::string_view name) {
  if (name == "rbu") return FusionStrategy::kRbu;
  if (name == "hist") return FusionStrategy::kHistogram;
  if (name == "avg") return FusionStrategy::kNaiveAveraging;
  if (name == "geomean") return FusionStrategy::kGeometricMean;
  if (name == "glfs") return FusionStrategy::kGlfs;
  throw std::invalid_argument("unknown fusion strategy '" + std::string(name) + "'");
}

std::string_view to_string(WeightKind k) {
  switch (k) {
    case WeightKind::kConstant: return "const";
    case WeightKind::kNormalDistance: return "normal-dist";
    case WeightKind::kQuadraticDistance: return "quad-dist";
  }
  return "unknown";
}

WeightKind parse_weight_kind(std::string_view name) {
  if (name == "const") return WeightKind::kConstant;
  if (name == "normal-dist") return WeightKind::kNormalDistance;
  if (name == "quad-dist") return WeightKind::kQuadraticDistance;
  throw std::invalid_argument("unknown weight scheme '" + std::string(name) + "'");
}

ClassDistribution laplace_smooth(std::span<const double> s, double alpha) {
  if (!(alpha > 0.0)) throw std::invalid_argument("laplace_smooth: alpha must be > 0");
  const double denom = 1.0 + static_cast<double>(s.size()) * alpha;
  ClassDistribution out(s.size());
  for (std::size_t k = 0; k < s.size(); ++k) out[k] = (s[k] + alpha) / denom;
  return out;
}

void check_distribution(std::span<const double> s, double tol) {
  if (s.empty()) throw std::invalid_argument("empty class distribution");
  double sum = 0.0;
  for (const double v : s) {
    if (!(v >= 0.0)) throw std::invalid_argument("class distribution has a negative or NaN entry");
    sum += v;
  }
  if (std::abs(sum - 1.0) > tol) {
    throw std::invalid_argument("class distribution sums to " + std::to_string(sum));
  }
}

int argmax(std::span<const double> s) {
  int best = 0;
  for (std::size_t k = 1; k < s.size(); ++k) {
    if (s[k] > s[static_cast<std::size_t>(best)]) best = static_cast<int>(k);
  }
  return best;
}

ClassDistribution softmax(std::span<const double> x) {
  ClassDistribution out(x.size());
  const double m = *std::max_element(x.begin(), x.end());
  double z = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    out[k] = std::exp(x[k] - m);
    z += out[k];
  }
  for (double& v : out) v /= z;
  return out;
}

double sample_weight(double distance, double incidence_cos, const WeightScheme& scheme) {
  switch (scheme.kind) {
    case WeightKind::kConstant:
      return 1.0;
    case WeightKind::kNormalDistance: {
      const double angular = std::clamp(std::max(incidence_cos, scheme.floor), scheme.floor, 1.0);
      return angular * scheme.reference_distance /
             std::max(distance, scheme.reference_distance);
    }
    case WeightKind::kQuadraticDistance: {
      const double x = (distance - scheme.optimal_distance) / scheme.radius;
      return std::max(scheme.floor, 1.0 - x * x);
    }
  }
  return 1.0;
}

namespace kernels {

bool uses_log_sum(FusionStrategy s) {
  return s == FusionStrategy::kRbu || s == FusionStrategy::kGeometricMean ||
         s == FusionStrategy::kGlfs;
}

bool uses_lin_sum(FusionStrategy s) {
  return s == FusionStrategy::kHistogram || s == FusionStrategy::kNaiveAveraging ||
         s == FusionStrategy::kGlfs;
}

void accumulate(const FusionConfig& cfg, std::span<const double> probs, double weight,
                std::span<double> log_sum, std::span<double> lin_sum) {
  const std::size_t k_count = probs.size();
  if (uses_log_sum(cfg.strategy)) {
    const double alpha = cfg.laplace_alpha;
    const double log_denom = std::log1p(static_cast<double>(k_count) * alpha);
    for (std::size_t k = 0; k < k_count; ++k) {
      log_sum[k] += weight * (std::log(probs[k] + alpha) - log_denom);
    }
  }
  switch (cfg.strategy) {
    case FusionStrategy::kHistogram:
      // Votes ignore the sample weight.
      lin_sum[static_cast<std::size_t>(argmax(probs))] += 1.0;
      break;
    case FusionStrategy::kNaiveAveraging:
    case FusionStrategy::kGlfs:
      for (std::size_t k = 0; k < k_count; ++k) lin_sum[k] += weight * probs[k];
      break;
    default:
      break;
  }
}

namespace {

void softmax_into(std::span<const double> x, double scale, std::span<double> out) {
  double m = -std::numeric_limits<double>::infinity();
  for (const double v : x) m = std::max(m, scale * v);
  double z = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    out[k] = std::exp(scale * x[k] - m);
    z += out[k];
  }
  for (double& v : out) v /= z;
}

void normalize_into(std::span<const double> x, std::span<double> out) {
  double z = 0.0;
  for (const double v : x) z += v;
  for (std::size_t k = 0; k < x.size(); ++k) out[k] = x[k] / z;
}

}  // namespace

void finalize(const FusionConfig& cfg, std::span<const double> log_sum,
              std::span<const double> lin_sum, double weight_sum,
              std::uint32_t obs_count, std::span<double> out) {
  if (obs_count == 0) throw std::logic_error("finalize: voxel has no observations");
  switch (cfg.strategy) {
    case FusionStrategy::kRbu:
      softmax_into(log_sum, 1.0, out);
      break;
    case FusionStrategy::kGeometricMean:
      softmax_into(log_sum, 1.0 / weight_sum, out);
      break;
    case FusionStrategy::kNaiveAveraging:
      normalize_into(lin_sum, out);
      break;
    case FusionStrategy::kHistogram:
      for (std::size_t k = 0; k < out.size(); ++k) {
        out[k] = lin_sum[k] / static_cast<double>(obs_count);
      }
      break;
    case FusionStrategy::kGlfs: {
      const double g = cfg.gates.gate;
      const double eps = cfg.gates.epsilon;
      const double exponent = (1.0 - eps) / weight_sum + eps;
      softmax_into(log_sum, exponent, out);
      double z = 0.0;
      for (const double v : lin_sum) z += v;
      for (std::size_t k = 0; k < out.size(); ++k) {
        out[k] = g * out[k] + (1.0 - g) * (lin_sum[k] / z);
      }
      break;
    }
  }
}

}  // namespace kernels

SemanticAccumulator::SemanticAccumulator(int class_count, FusionConfig config, bool caching)
    : class_count_(class_count), config_(config), caching_(caching) {
  if (class_count < 1) throw std::invalid_argument("SemanticAccumulator: class_count must be >= 1");
  if (!(config.laplace_alpha > 0.0)) {
    throw std::invalid_argument("SemanticAccumulator: laplace alpha must be > 0");
  }
  const auto k = static_cast<std::size_t>(class_count);
  if (kernels::uses_log_sum(config.strategy)) log_sum_.assign(k, 0.0);
  if (kernels::uses_lin_sum(config.strategy)) lin_sum_.assign(k, 0.0);
}

void SemanticAccumulator::observe(std::span<const double> probs, double weight) {
  if (probs.size() != static_cast<std::size_t>(class_count_)) {
    throw std::invalid_argument("observe: distribution has wrong class count");
  }
  check_distribution(probs);
  if (!(weight > 0.0) || !std::isfinite(weight)) {
    throw std::invalid_argument("observe: weight must be positive and finite");
  }
  kernels::accumulate(config_, probs, weight, log_sum_, lin_sum_);
  weight_sum_ += weight;
  ++obs_count_;
}

void SemanticAccumulator::observe(std::span<const double> probs, double weight,
                                  const ObservationRecord& record) {
  observe(probs, weight);
  if (caching_) cache_.push_back(record);
}

ClassDistribution SemanticAccumulator::finalize() const {
  ClassDistribution out(static_cast<std::size_t>(class_count_));
  kernels::finalize(config_, log_sum_, lin_sum_, weight_sum_, obs_count_, out);
  return out;
}

SemanticMap::SemanticMap(std::size_t voxel_count, int class_count, FusionConfig config)
    : class_count_(class_count), config_(config) {
  if (class_count < 1) throw std::invalid_argument("SemanticMap: class_count must be >= 1");
  if (!(config.laplace_alpha > 0.0)) {
    throw std::invalid_argument("SemanticMap: laplace alpha must be > 0");
  }
  const std::size_t n = voxel_count * static_cast<std::size_t>(class_count);
  if (kernels::uses_log_sum(config.strategy)) log_sum_.assign(n, 0.0);
  if (kernels::uses_lin_sum(config.strategy)) lin_sum_.assign(n, 0.0);
  weight_sum_.assign(voxel_count, 0.0);
  obs_count_.assign(voxel_count, 0);
}

std::span<double> SemanticMap::log_row(std::size_t voxel) {
  if (log_sum_.empty()) return {};
  const auto k = static_cast<std::size_t>(class_count_);
  return std::span<double>(log_sum_).subspan(voxel * k, k);
}

std::span<double> SemanticMap::lin_row(std::size_t voxel) {
  if (lin_sum_.empty()) return {};
  const auto k = static_cast<std::size_t>(class_count_);
  return std::span<double>(lin_sum_).subspan(voxel * k, k);
}

void SemanticMap::observe(std::size_t voxel, std::span<const double> probs, double weight) {
  kernels::accumulate(config_, probs, weight, log_row(voxel), lin_row(voxel));
  weight_sum_[voxel] += weight;
  ++obs_count_[voxel];
}

ClassDistribution SemanticMap::finalize(std::size_t voxel) const {
  const auto k = static_cast<std::size_t>(class_count_);
  std::span<const double> log_row;
  std::span<const double> lin_row;
  if (!log_sum_.empty()) log_row = std::span<const double>(log_sum_).subspan(voxel * k, k);
  if (!lin_sum_.empty()) lin_row = std::span<const double>(lin_sum_).subspan(voxel * k, k);
  ClassDistribution out(k);
  kernels::finalize(config_, log_row, lin_row, weight_sum_[voxel], obs_count_[voxel], out);
  return out;
}

}  // namespace semfuse
