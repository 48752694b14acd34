#pragma once

// Randomized GLFS inputs and independent oracles shared by the unit and
// acceptance tests.

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "semfuse/fusion.hpp"
#include "semfuse/glfs.hpp"
#include "semfuse/observation_cache.hpp"

namespace semfuse::test {

inline std::vector<ObservationRecord> random_records(int k, int t_count, std::mt19937_64& rng,
                                                     double logit_scale = 3.0) {
  std::normal_distribution<double> n(0.0, logit_scale);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<ObservationRecord> recs(static_cast<std::size_t>(t_count));
  for (auto& r : recs) {
    r.logits.resize(static_cast<std::size_t>(k));
    for (auto& v : r.logits) v = static_cast<float>(n(rng));
    r.distance = static_cast<float>(0.3 + 5.0 * u(rng));
    r.incidence_cos = static_cast<float>(u(rng));
  }
  return recs;
}

// Pushes each observation's top logit at least `gap` above the runner-up. The
// histogram limit only holds when the gap dominates τ.
inline void separate_top_two(std::vector<ObservationRecord>& recs, float gap) {
  for (auto& r : recs) {
    auto top = std::max_element(r.logits.begin(), r.logits.end());
    const float value = *top;
    float second = -INFINITY;
    for (auto it = r.logits.begin(); it != r.logits.end(); ++it) {
      if (it != top) second = std::max(second, *it);
    }
    if (value - second < gap) *top = second + gap;
  }
}

// Reference fusion through the plain accumulator with unit weights.
inline ClassDistribution reference_fuse(FusionStrategy s, const std::vector<ObservationRecord>& recs,
                                        int k, double alpha = 1e-3) {
  FusionConfig cfg;
  cfg.strategy = s;
  cfg.laplace_alpha = alpha;
  SemanticAccumulator acc(k, cfg);
  for (const auto& r : recs) {
    std::vector<double> l(r.logits.begin(), r.logits.end());
    acc.observe(softmax(l), 1.0);
  }
  return acc.finalize();
}

inline ObservationCache random_cache(int k, std::size_t voxels, std::uint64_t seed,
                                     int max_frames = 8) {
  std::mt19937_64 rng(seed);
  ObservationCache cache(k);
  for (std::size_t i = 0; i < voxels; ++i) {
    const int t = 1 + static_cast<int>(rng() % static_cast<std::uint64_t>(max_frames));
    const auto recs = random_records(k, t, rng, 2.0);
    cache.add_voxel(i, static_cast<int>(i % static_cast<std::size_t>(k)), recs);
  }
  return cache;
}

// Interior parameters so every unconstrained coordinate has a finite gradient.
inline GlfsParams random_interior_params(int k, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  GlfsParams p = GlfsParams::make(k, 0.7, 0.4);
  for (auto& v : p.log_tau) v = u(rng);
  for (auto& v : p.table_raw) v += u(rng);
  return p;
}

struct GradientCheck {
  double max_relative_error = 0.0;
  std::size_t parameters = 0;
  std::size_t nonzero = 0;
};

// Central differences at step h against the analytic gradient. The relative
// error uses max(|a|, |n|, floor) in the denominator.
inline GradientCheck check_gradient(const ObservationCache& cache, const GlfsParams& params,
                                    const TrainerConfig& config, double h = 1e-5,
                                    double floor = 1e-6) {
  std::vector<double> grad;
  glfs_loss_and_gradient(cache, params, config, {}, &grad);
  const auto theta = params.flatten();
  GradientCheck out;
  out.parameters = theta.size();
  for (std::size_t i = 0; i < theta.size(); ++i) {
    GlfsParams plus = params, minus = params;
    auto tp = theta, tm = theta;
    tp[i] += h;
    tm[i] -= h;
    plus.unflatten(tp);
    minus.unflatten(tm);
    const double numeric =
        (glfs_loss(cache, plus, config) - glfs_loss(cache, minus, config)) / (2.0 * h);
    const double denom = std::max({std::abs(grad[i]), std::abs(numeric), floor});
    out.max_relative_error = std::max(out.max_relative_error, std::abs(grad[i] - numeric) / denom);
    if (std::abs(grad[i]) > floor) ++out.nonzero;
  }
  return out;
}

}  // namespace semfuse::test
