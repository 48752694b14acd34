#include "semfuse/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include <omp.h>

namespace semfuse {

namespace {

struct PendingObservation {
  std::size_t voxel;
  std::uint32_t frame;
  float distance;
  float incidence_cos;
  std::size_t logit_offset;  // into the owning thread's logit buffer
  int thread;
};

class FuseSink : public ObservationSink {
 public:
  FuseSink(SemanticMap* semantic, const WeightScheme& weights, bool collect, int k)
      : semantic_(semantic), weights_(weights), collect_(collect), k_(static_cast<std::size_t>(k)) {
    const int threads = omp_get_max_threads();
    pending_.resize(static_cast<std::size_t>(threads));
    logits_.resize(static_cast<std::size_t>(threads));
  }

  void begin_frame(const Frame& frame, const std::vector<double>* probs) {
    frame_ = &frame;
    probs_ = probs;
  }

  void observe(std::size_t voxel, std::size_t pixel, float distance,
               float incidence_cos) override {
    if (semantic_ != nullptr) {
      semantic_->observe(voxel, std::span<const double>(*probs_).subspan(pixel * k_, k_),
                         sample_weight(distance, incidence_cos, weights_));
    }
    if (collect_) {
      const int t = omp_get_thread_num();
      auto& buf = logits_[static_cast<std::size_t>(t)];
      pending_[static_cast<std::size_t>(t)].push_back(
          {voxel, frame_->index, distance, incidence_cos, buf.size(), t});
      const auto first = frame_->logits.begin() + static_cast<std::ptrdiff_t>(pixel * k_);
      buf.insert(buf.end(), first, first + static_cast<std::ptrdiff_t>(k_));
    }
  }

  /// All collected observations ordered by (voxel, frame).
  std::vector<PendingObservation> sorted() const {
    std::vector<PendingObservation> all;
    for (const auto& p : pending_) all.insert(all.end(), p.begin(), p.end());
    std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) {
      return a.voxel != b.voxel ? a.voxel < b.voxel : a.frame < b.frame;
    });
    return all;
  }

  std::span<const float> logits(const PendingObservation& o) const {
    return std::span<const float>(logits_[static_cast<std::size_t>(o.thread)])
        .subspan(o.logit_offset, k_);
  }

 private:
  SemanticMap* semantic_;
  WeightScheme weights_;
  bool collect_;
  std::size_t k_;
  const Frame* frame_ = nullptr;
  const std::vector<double>* probs_ = nullptr;
  std::vector<std::vector<PendingObservation>> pending_;
  std::vector<std::vector<float>> logits_;
};

}  // namespace

VoxelGrid make_scene_grid(const Scene& scene, double truncation) {
  if (scene.bounds_min && scene.bounds_max) {
    return VoxelGrid::from_bounds(*scene.bounds_min, *scene.bounds_max, scene.voxel_size,
                                  truncation);
  }
  const double inf = std::numeric_limits<double>::infinity();
  Eigen::Vector3d lo = Eigen::Vector3d::Constant(inf);
  Eigen::Vector3d hi = Eigen::Vector3d::Constant(-inf);
  const Intrinsics& in = scene.intrinsics;
  for (const Frame& f : scene.frames) {
    for (int r = 0; r < in.height; r += 4) {
      for (int c = 0; c < in.width; c += 4) {
        const float d = f.depth[static_cast<std::size_t>(r) * in.width + c];
        if (!(d > 0.0f) || !std::isfinite(d)) continue;
        const Eigen::Vector3d p = back_project(c, r, d, f.pose, in);
        lo = lo.cwiseMin(p);
        hi = hi.cwiseMax(p);
      }
    }
  }
  if (!(lo.array() <= hi.array()).all()) {
    throw std::invalid_argument("scene has no valid depth; cannot size the voxel grid");
  }
  const Eigen::Vector3d pad = Eigen::Vector3d::Constant(0.2);
  return VoxelGrid::from_bounds(lo - pad, hi + pad, scene.voxel_size, truncation);
}

FuseResult run_fuse(const Scene& scene, const FuseOptions& options) {
  scene.validate();
  const int k = scene.class_count;
  const auto ku = static_cast<std::size_t>(k);
  const bool glfs = options.fusion.strategy == FusionStrategy::kGlfs;
  if (glfs && !options.glfs) {
    throw std::invalid_argument("fusion strategy glfs requires GLFS parameters (--glfs-params)");
  }
  if (glfs && options.glfs->class_count != k) {
    throw std::invalid_argument("GLFS parameters were trained for a different class count");
  }
  if (glfs && !(options.scaling.mode == ScalingMode::kTemperature && options.scaling.tau[0] == 1.0)) {
    throw std::invalid_argument("GLFS carries its own temperatures; do not combine it with --scaling");
  }
  options.scaling.validate(k);

  VoxelGrid grid = make_scene_grid(scene, options.truncation);
  std::optional<SemanticMap> semantic;
  if (!glfs) semantic.emplace(grid.size(), k, options.fusion);
  FuseSink sink(semantic ? &*semantic : nullptr, options.weights, glfs || options.build_cache, k);

  IntegrationConfig integration;
  integration.weights = options.weights;
  std::vector<double> probs;
  for (const Frame& f : scene.frames) {
    if (semantic) {
      const std::size_t hw = scene.intrinsics.pixel_count();
      probs.resize(hw * ku);
      const auto n = static_cast<std::ptrdiff_t>(hw);
#pragma omp parallel for schedule(static)
      for (std::ptrdiff_t p = 0; p < n; ++p) {
        const auto px = static_cast<std::size_t>(p);
        scale_logits_into(std::span<const float>(f.logits).subspan(px * ku, ku), options.scaling,
                          std::span<double>(probs).subspan(px * ku, ku));
      }
    }
    sink.begin_frame(f, &probs);
    integrate_depth_frame(grid, scene.intrinsics, f, integration, &sink);
  }

  const auto surface = extract_surface_voxels(grid);
  const bool labelled =
      std::all_of(scene.frames.begin(), scene.frames.end(), [](const Frame& f) { return f.has_gt(); });
  if (labelled) assign_ground_truth(grid, scene, surface);

  const auto pending = (glfs || options.build_cache) ? sink.sorted()
                                                     : std::vector<PendingObservation>{};
  FuseResult result;
  result.observations = pending.size();
  result.cache = ObservationCache(k);
  result.cache.provenance() = {"fusion=" + std::string(to_string(options.fusion.strategy)),
                               "weights=" + std::string(to_string(options.weights.kind)),
                               "frames=" + std::to_string(scene.frames.size())};

  VoxelMap& map = result.map;
  map.origin = grid.origin();
  map.voxel_size = grid.voxel_size();
  map.dims = grid.dims();
  map.truncation = grid.truncation();
  map.class_count = k;
  map.class_names = scene.class_names;
  map.fusion = std::string(to_string(options.fusion.strategy));
  map.weights = std::string(to_string(options.weights.kind));
  map.laplace_alpha = options.fusion.laplace_alpha;
  map.calibration = options.calibration;

  std::vector<float> logits, distance, incidence;
  std::vector<std::uint32_t> frames;
  auto it = pending.begin();
  for (const std::size_t v : surface) {
    // Observations of this voxel, if they were collected.
    while (it != pending.end() && it->voxel < v) ++it;
    auto end = it;
    while (end != pending.end() && end->voxel == v) ++end;

    ClassDistribution fused;
    if (glfs) {
      if (it == end) continue;
      logits.clear();
      distance.clear();
      incidence.clear();
      for (auto o = it; o != end; ++o) {
        const auto l = sink.logits(*o);
        logits.insert(logits.end(), l.begin(), l.end());
        distance.push_back(o->distance);
        incidence.push_back(o->incidence_cos);
      }
      fused = glfs_fuse(ObservationSpan{k, logits, distance, incidence}, *options.glfs,
                        options.fusion.laplace_alpha);
    } else {
      if (semantic->obs_count(v) == 0) continue;
      fused = semantic->finalize(v);
    }

    VoxelMapEntry e;
    e.index = v;
    const auto c = grid.coords(v);
    e.ix = c[0];
    e.iy = c[1];
    e.iz = c[2];
    e.sdf = grid.sdf(v);
    e.weight = grid.weight(v);
    e.gt_label = grid.gt_label(v);
    e.probs.assign(fused.begin(), fused.end());
    const bool cache_it = options.build_cache && e.gt_label >= 0 && it != end;
    map.voxels.push_back(std::move(e));

    if (cache_it) {
      logits.clear();
      distance.clear();
      incidence.clear();
      frames.clear();
      for (auto o = it; o != end; ++o) {
        const auto l = sink.logits(*o);
        logits.insert(logits.end(), l.begin(), l.end());
        distance.push_back(o->distance);
        incidence.push_back(o->incidence_cos);
        frames.push_back(o->frame);
      }
      result.cache.add_voxel(v, grid.gt_label(v), logits, distance, incidence, frames);
    }
    it = end;
  }
  return result;
}

Evaluation evaluate(const VoxelMap& map, const Scene* scene, const EvaluateOptions& options) {
  Evaluation ev;
  ev.report.fusion = map.fusion;
  ev.report.calibration = map.calibration;
  ev.report.bins = options.bins;
  const PredictionSet voxels = map.predictions();
  if (voxels.empty()) throw std::invalid_argument("evaluate: the map has no labelled voxels");
  ev.report.voxel = summarize(voxels, options.bins);
  for (const auto c : {Conditioning::kNone, Conditioning::kPredictedClass,
                       Conditioning::kGroundTruthClass}) {
    ev.voxel_tables.push_back(reliability_table(voxels, options.bins, c));
  }
  if (scene != nullptr) {
    CalibrationObjective obj;
    obj.bins = options.bins;
    obj.pixel_stride = options.pixel_stride;
    const PixelObjective pixels(std::span<const Scene>(scene, 1), obj);
    const PredictionSet preds = pixels.predictions(options.pixel_scaling);
    ev.report.pixel = summarize(preds, options.bins);
    for (const auto c : {Conditioning::kNone, Conditioning::kPredictedClass,
                         Conditioning::kGroundTruthClass}) {
      ev.pixel_tables.push_back(reliability_table(preds, options.bins, c));
    }
  }
  return ev;
}

}  // namespace semfuse
