#include "semfuse/scaling.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <set>
#include <stdexcept>
#include <string>

namespace semfuse {

std::string_view to_string(ScalingMode m) {
  return m == ScalingMode::kTemperature ? "temp" : "vector";
}

ScalingMode parse_scaling_mode(std::string_view name) {
  if (name == "temp" || name == "temperature") return ScalingMode::kTemperature;
  if (name == "vector") return ScalingMode::kVector;
  throw std::invalid_argument("unknown scaling mode '" + std::string(name) + "'");
}

void ScalingParams::validate(int class_count) const {
  const std::size_t expected =
      mode == ScalingMode::kTemperature ? 1 : static_cast<std::size_t>(class_count);
  if (tau.size() != expected) {
    throw std::invalid_argument("scaling params: expected " + std::to_string(expected) +
                                " tau values, found " + std::to_string(tau.size()));
  }
  for (const double t : tau) {
    if (!std::isfinite(t) || !(t > 0.0)) {
      throw std::invalid_argument("scaling params: tau must be finite and > 0");
    }
  }
}

namespace {

template <typename T>
void scale_into(std::span<const T> logits, const ScalingParams& params, std::span<double> out) {
  double m = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < logits.size(); ++k) {
    out[k] = static_cast<double>(logits[k]) / params.tau_for(k);
    m = std::max(m, out[k]);
  }
  double z = 0.0;
  for (double& v : out) {
    v = std::exp(v - m);
    z += v;
  }
  for (double& v : out) v /= z;
}

}  // namespace

void scale_logits_into(std::span<const float> logits, const ScalingParams& params,
                       std::span<double> out) {
  scale_into(logits, params, out);
}

ClassDistribution scale_logits(std::span<const float> logits, const ScalingParams& params) {
  ClassDistribution out(logits.size());
  scale_into(logits, params, std::span<double>(out));
  return out;
}

ClassDistribution scale_logits(std::span<const double> logits, const ScalingParams& params) {
  ClassDistribution out(logits.size());
  scale_into(logits, params, std::span<double>(out));
  return out;
}

std::string_view to_string(CalibrationMetric m) {
  switch (m) {
    case CalibrationMetric::kMece: return "mece";
    case CalibrationMetric::kEce: return "ece";
    case CalibrationMetric::kTlEce: return "tl-ece";
  }
  return "unknown";
}

CalibrationMetric parse_calibration_metric(std::string_view name) {
  if (name == "mece") return CalibrationMetric::kMece;
  if (name == "ece") return CalibrationMetric::kEce;
  if (name == "tl-ece" || name == "tl_ece") return CalibrationMetric::kTlEce;
  throw std::invalid_argument("unknown calibration metric '" + std::string(name) + "'");
}

double evaluate_metric(const PredictionSet& preds, CalibrationMetric metric, int bins) {
  switch (metric) {
    case CalibrationMetric::kMece: return compute_mece(preds, bins);
    case CalibrationMetric::kEce: return compute_ece(preds, bins);
    case CalibrationMetric::kTlEce: return compute_tl_ece(preds, bins);
  }
  return std::numeric_limits<double>::quiet_NaN();
}

NelderMeadResult nelder_mead(const std::function<double(std::span<const double>)>& f,
                             std::vector<double> x0, std::vector<double> step,
                             double tolerance, int max_evaluations) {
  const std::size_t n = x0.size();
  NelderMeadResult result;
  auto eval = [&](const std::vector<double>& x) {
    ++result.evaluations;
    const double v = f(x);
    return std::isnan(v) ? std::numeric_limits<double>::infinity() : v;
  };

  std::vector<std::vector<double>> simplex(n + 1, x0);
  std::vector<double> values(n + 1);
  values[0] = eval(x0);
  for (std::size_t i = 0; i < n; ++i) {
    simplex[i + 1][i] += step[i];
    values[i + 1] = eval(simplex[i + 1]);
  }

  std::vector<std::size_t> order(n + 1);
  auto sort_simplex = [&] {
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
    std::vector<std::vector<double>> s(n + 1);
    std::vector<double> v(n + 1);
    for (std::size_t i = 0; i <= n; ++i) {
      s[i] = simplex[order[i]];
      v[i] = values[order[i]];
    }
    simplex = std::move(s);
    values = std::move(v);
  };

  auto along = [&](const std::vector<double>& centroid, const std::vector<double>& worst,
                   double coef) {
    std::vector<double> x(n);
    for (std::size_t i = 0; i < n; ++i) x[i] = centroid[i] + coef * (worst[i] - centroid[i]);
    return x;
  };

  while (result.evaluations < max_evaluations) {
    sort_simplex();
    if (std::isfinite(values[n]) && values[n] - values[0] < tolerance) break;

    std::vector<double> centroid(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t d = 0; d < n; ++d) centroid[d] += simplex[i][d] / static_cast<double>(n);
    }
    const auto xr = along(centroid, simplex[n], -1.0);
    const double fr = eval(xr);
    if (fr < values[0]) {
      const auto xe = along(centroid, simplex[n], -2.0);
      const double fe = eval(xe);
      if (fe < fr) {
        simplex[n] = xe;
        values[n] = fe;
      } else {
        simplex[n] = xr;
        values[n] = fr;
      }
      continue;
    }
    if (fr < values[n - 1]) {
      simplex[n] = xr;
      values[n] = fr;
      continue;
    }
    const bool outside = fr < values[n];
    const auto xc = along(centroid, simplex[n], outside ? -0.5 : 0.5);
    const double fc = eval(xc);
    if (fc < (outside ? fr : values[n])) {
      simplex[n] = xc;
      values[n] = fc;
      continue;
    }
    for (std::size_t i = 1; i <= n; ++i) {
      for (std::size_t d = 0; d < n; ++d) {
        simplex[i][d] = simplex[0][d] + 0.5 * (simplex[i][d] - simplex[0][d]);
      }
      values[i] = eval(simplex[i]);
    }
  }
  sort_simplex();
  result.x = simplex[0];
  result.value = values[0];
  return result;
}

CalibrationResult optimize_scaling(const ScalingObjective& objective, int class_count,
                                   ScalingMode mode, const SearchOptions& options) {
  CalibrationResult result;
  // Candidates whose scaled outputs are unusable score +inf; a failure at the
  // identity is a real error and propagates.
  auto safe = [&](const ScalingParams& p) {
    ++result.evaluations;
    double v = std::numeric_limits<double>::infinity();
    try {
      v = objective(p);
    } catch (const std::invalid_argument&) {
    }
    return std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
  };

  double best_tau = 1.0;
  ++result.evaluations;
  double best = objective(ScalingParams::identity());
  if (!std::isfinite(best)) best = std::numeric_limits<double>::infinity();
  result.identity_objective = best;

  const double lo = std::log(options.tau_min);
  const double hi = std::log(options.tau_max);
  const int sweep = std::max(options.sweep_count, 2);
  const double spacing = (hi - lo) / (sweep - 1);
  for (int i = 0; i < sweep; ++i) {
    const double tau = std::exp(lo + spacing * i);
    const double v = safe(ScalingParams::temperature(tau));
    if (v < best) {
      best = v;
      best_tau = tau;
    }
  }

  const auto refine = nelder_mead(
      [&](std::span<const double> x) {
        const double log_tau = std::clamp(x[0], lo, hi);
        return safe(ScalingParams::temperature(std::exp(log_tau)));
      },
      {std::log(best_tau)}, {0.5 * spacing}, options.tolerance, options.max_refine_evaluations);
  if (refine.value < best) {
    best = refine.value;
    best_tau = std::exp(std::clamp(refine.x[0], lo, hi));
  }

  result.params = ScalingParams::temperature(best_tau);
  result.objective = best;
  if (mode == ScalingMode::kTemperature) return result;

  const auto k = static_cast<std::size_t>(class_count);
  const double box_lo = std::log(best_tau * (1.0 - options.vector_box));
  const double box_hi = std::log(best_tau * (1.0 + options.vector_box));
  std::vector<double> best_vec(k, best_tau);
  auto consider = [&](const std::vector<double>& taus) {
    const double v = safe(ScalingParams::vector(taus));
    if (v < best) {
      best = v;
      best_vec = taus;
    }
  };
  consider(best_vec);
  const int diag = std::max(options.diagonal_samples, 2);
  for (int i = 0; i < diag; ++i) {
    const double c = std::exp(box_lo + (box_hi - box_lo) * i / (diag - 1));
    consider(std::vector<double>(k, c));
  }
  std::mt19937_64 rng(options.seed);
  std::uniform_real_distribution<double> unit(box_lo, box_hi);
  for (int s = 0; s < options.random_samples; ++s) {
    std::vector<double> taus(k);
    for (auto& t : taus) t = std::exp(unit(rng));
    consider(taus);
  }

  std::vector<double> x0(k);
  for (std::size_t i = 0; i < k; ++i) x0[i] = std::log(best_vec[i]);
  const auto vec_refine = nelder_mead(
      [&](std::span<const double> x) {
        std::vector<double> taus(k);
        for (std::size_t i = 0; i < k; ++i) taus[i] = std::exp(std::clamp(x[i], box_lo, box_hi));
        return safe(ScalingParams::vector(taus));
      },
      x0, std::vector<double>(k, 0.1), options.tolerance, options.max_refine_evaluations);
  if (vec_refine.value < best) {
    best = vec_refine.value;
    for (std::size_t i = 0; i < k; ++i) {
      best_vec[i] = std::exp(std::clamp(vec_refine.x[i], box_lo, box_hi));
    }
  }
  result.params = ScalingParams::vector(best_vec);
  result.objective = best;
  return result;
}

PixelObjective::PixelObjective(std::span<const Scene> scenes,
                               const CalibrationObjective& objective)
    : objective_(objective) {
  if (scenes.empty()) throw std::invalid_argument("calibrate_2d: no scenes");
  class_count_ = scenes.front().class_count;
  const int stride = std::max(objective.pixel_stride, 1);
  const auto k = static_cast<std::size_t>(class_count_);
  for (const Scene& scene : scenes) {
    if (scene.class_count != class_count_) {
      throw std::invalid_argument("calibrate_2d: scenes disagree on class count");
    }
    const Intrinsics& in = scene.intrinsics;
    for (const Frame& f : scene.frames) {
      if (!f.has_gt()) continue;
      for (int r = 0; r < in.height; r += stride) {
        for (int c = 0; c < in.width; c += stride) {
          const std::size_t px = static_cast<std::size_t>(r) * in.width + c;
          const int label = f.gt_labels[px];
          if (label >= class_count_) continue;
          logits_.insert(logits_.end(), f.logits.begin() + static_cast<std::ptrdiff_t>(px * k),
                         f.logits.begin() + static_cast<std::ptrdiff_t>((px + 1) * k));
          gt_.push_back(label);
        }
      }
    }
  }
  if (gt_.empty()) throw std::invalid_argument("calibrate_2d: no labeled pixels");
  if (std::set<int>(gt_.begin(), gt_.end()).size() < 2) {
    throw std::invalid_argument(
        "calibrate_2d: ground truth has a single class; calibration is degenerate");
  }
}

PredictionSet PixelObjective::predictions(const ScalingParams& params) const {
  const auto k = static_cast<std::size_t>(class_count_);
  PredictionSet preds(class_count_);
  preds.reserve(gt_.size());
  std::vector<double> probs(k);
  for (std::size_t i = 0; i < gt_.size(); ++i) {
    scale_logits_into(std::span<const float>(logits_).subspan(i * k, k), params, probs);
    preds.add(probs, gt_[i]);
  }
  return preds;
}

double PixelObjective::operator()(const ScalingParams& params) const {
  return evaluate_metric(predictions(params), objective_.metric, objective_.bins);
}

PredictionSet fuse_cache(const ObservationCache& cache, const ScalingParams& params,
                         const FusionConfig& fusion, const WeightScheme& weights) {
  const int k = cache.class_count();
  const auto ku = static_cast<std::size_t>(k);
  const std::size_t n = cache.voxel_count();
  std::vector<double> fused(n * ku);
  const auto nn = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel
  {
    std::vector<double> probs(ku), log_sum(ku), lin_sum(ku);
#pragma omp for schedule(static)
    for (std::ptrdiff_t i = 0; i < nn; ++i) {
      const auto obs = cache.voxel(static_cast<std::size_t>(i));
      std::fill(log_sum.begin(), log_sum.end(), 0.0);
      std::fill(lin_sum.begin(), lin_sum.end(), 0.0);
      double weight_sum = 0.0;
      for (std::size_t t = 0; t < obs.size(); ++t) {
        scale_logits_into(obs.logits_of(t), params, probs);
        const double w = sample_weight(obs.distance[t], obs.incidence_cos[t], weights);
        kernels::accumulate(fusion, probs, w, log_sum, lin_sum);
        weight_sum += w;
      }
      kernels::finalize(fusion, log_sum, lin_sum, weight_sum,
                        static_cast<std::uint32_t>(obs.size()),
                        std::span<double>(fused).subspan(static_cast<std::size_t>(i) * ku, ku));
    }
  }
  PredictionSet preds(k);
  preds.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    preds.add(std::span<const double>(fused).subspan(i * ku, ku), cache.gt_label(i));
  }
  return preds;
}

VoxelObjective::VoxelObjective(std::span<const ObservationCache> caches,
                               const CalibrationObjective& objective)
    : caches_(caches), objective_(objective) {
  if (caches.empty()) {
    throw std::invalid_argument(
        "calibrate_3d: observation cache missing; re-run fuse with caching enabled (--cache)");
  }
  for (const auto& c : caches) {
    if (c.empty()) {
      throw std::invalid_argument(
          "calibrate_3d: observation cache is empty; re-run fuse with caching enabled (--cache)");
    }
  }
}

double VoxelObjective::operator()(const ScalingParams& params) const {
  double sum = 0.0;
  for (const auto& cache : caches_) {
    sum += evaluate_metric(fuse_cache(cache, params, objective_.fusion, objective_.weights),
                           objective_.metric, objective_.bins);
  }
  return sum / static_cast<double>(caches_.size());
}

CalibrationResult calibrate_2d(std::span<const Scene> scenes, const CalibrationObjective& objective,
                               ScalingMode mode, const SearchOptions& options) {
  const PixelObjective pixels(scenes, objective);
  return optimize_scaling([&](const ScalingParams& p) { return pixels(p); },
                          pixels.class_count(), mode, options);
}

CalibrationResult calibrate_3d(std::span<const ObservationCache> caches,
                               const CalibrationObjective& objective, ScalingMode mode,
                               const SearchOptions& options) {
  const VoxelObjective voxels(caches, objective);
  return optimize_scaling([&](const ScalingParams& p) { return voxels(p); },
                          caches.front().class_count(), mode, options);
}

}  // namespace semfuse
