#include "semfuse/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <set>
#include <sstream>
#include <stdexcept>

#include <Eigen/Geometry>
#include <json.hpp>

#include "semfuse/tsdf.hpp"

namespace semfuse {

namespace {

using json = nlohmann::json;

constexpr double kRayEps = 1e-9;

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

// Cheap counter-based stream for location-tied draws.
struct HashStream {
  std::uint64_t state;
  double uniform() {
    state = splitmix(state);
    return static_cast<double>(state >> 11) * 0x1.0p-53;
  }
};

double uniform(std::mt19937_64& rng) {
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

bool in_disc(const Eigen::Vector2d& p, const Eigen::Vector2d& c, double r) {
  return (p - c).norm() <= r;
}

std::vector<float> logits_from(const std::vector<double>& q, double noise, double tau_star,
                               std::mt19937_64& rng) {
  std::vector<float> out(q.size());
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (std::size_t k = 0; k < q.size(); ++k) {
    double l = std::log(q[k]);
    if (noise > 0.0) l += noise * gauss(rng);
    out[k] = static_cast<float>(l / tau_star);
  }
  return out;
}

std::vector<double> peaked(int class_count, int favored, double confidence) {
  const double rest = (1.0 - confidence) / (class_count - 1);
  std::vector<double> q(static_cast<std::size_t>(class_count), rest);
  q[static_cast<std::size_t>(favored)] = confidence;
  return q;
}

}  // namespace

Intrinsics SceneSpec::intrinsics() const {
  Intrinsics in;
  in.width = width;
  in.height = height;
  const double f = 0.5 * width / std::tan(0.5 * hfov_deg * std::numbers::pi / 180.0);
  in.fx = fx > 0.0 ? fx : f;
  in.fy = fy > 0.0 ? fy : in.fx;
  in.cx = cx > 0.0 ? cx : 0.5 * (width - 1);
  in.cy = cy > 0.0 ? cy : 0.5 * (height - 1);
  return in;
}

std::pair<Eigen::Vector3d, Eigen::Vector3d> SceneSpec::bounds() const {
  const double inf = std::numeric_limits<double>::infinity();
  Eigen::Vector3d lo = Eigen::Vector3d::Constant(inf);
  Eigen::Vector3d hi = Eigen::Vector3d::Constant(-inf);
  auto grow = [&](const Eigen::Vector3d& p) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  };
  if (room.enabled) {
    grow(Eigen::Vector3d::Zero());
    grow(room.size);
  } else {
    for (const auto& b : boxes) {
      grow(b.min);
      grow(b.max);
    }
    // Unbounded planes: cover the region the camera can reach.
    const auto& tr = trajectory;
    const double reach = tr.radius + 2.0;
    grow({tr.center.x() - reach, tr.center.y() - reach, 0.0});
    grow({tr.center.x() + reach, tr.center.y() + reach, tr.height + tr.height_jitter});
    for (const auto& p : planes) {
      Eigen::Vector3d q = lo;
      q[p.axis] = p.offset;
      grow(q);
    }
  }
  return {lo - Eigen::Vector3d::Constant(margin), hi + Eigen::Vector3d::Constant(margin)};
}

void SceneSpec::validate() const {
  if (class_count < 2) throw std::invalid_argument("scene spec: class_count must be >= 2");
  if (!class_names.empty() && class_names.size() != static_cast<std::size_t>(class_count)) {
    throw std::invalid_argument("scene spec: class_names must have class_count entries");
  }
  if (!room.enabled && boxes.empty() && planes.empty()) {
    throw std::invalid_argument("scene spec: empty object list");
  }
  if (!(voxel_size > 0.0)) throw std::invalid_argument("scene spec: voxel_size must be > 0");
  if (width <= 0 || height <= 0) throw std::invalid_argument("scene spec: bad image size");
  if (trajectory.frames < 1) throw std::invalid_argument("scene spec: frame count must be >= 1");
  auto check_class = [&](int c, const char* what) {
    if (c < 0 || c >= class_count) {
      throw std::invalid_argument(std::string("scene spec: ") + what + " class out of range");
    }
  };
  if (room.enabled) {
    if ((room.size.array() <= 0.0).any()) throw std::invalid_argument("scene spec: bad room size");
    check_class(room.floor_class, "floor");
    check_class(room.wall_class, "wall");
    check_class(room.ceiling_class, "ceiling");
  }
  for (const auto& b : boxes) {
    check_class(b.class_id, "box");
    if ((b.max.array() <= b.min.array()).any()) {
      throw std::invalid_argument("scene spec: box max must exceed min");
    }
    if (room.enabled &&
        ((b.min.array() < 0.0).any() || (b.max.array() > room.size.array()).any())) {
      throw std::invalid_argument("scene spec: box outside the room");
    }
  }
  for (const auto& p : planes) {
    check_class(p.class_id, "plane");
    if (p.axis < 0 || p.axis > 2) throw std::invalid_argument("scene spec: plane axis not in 0..2");
  }
  for (const auto& d : trajectory.dwell) {
    if (!(d.multiplier > 0.0)) throw std::invalid_argument("scene spec: dwell multiplier must be > 0");
  }
  intrinsics().validate();
}

SegmenterSpec SegmenterSpec::symmetric(int class_count, double diagonal) {
  SegmenterSpec s;
  const double off = class_count > 1 ? (1.0 - diagonal) / (class_count - 1) : 0.0;
  s.confusion.assign(static_cast<std::size_t>(class_count),
                     std::vector<double>(static_cast<std::size_t>(class_count), off));
  for (int k = 0; k < class_count; ++k) {
    s.confusion[static_cast<std::size_t>(k)][static_cast<std::size_t>(k)] = diagonal;
  }
  return s;
}

void SegmenterSpec::validate(int class_count) const {
  if (confusion.size() != static_cast<std::size_t>(class_count)) {
    throw std::invalid_argument("segmenter spec: confusion matrix must be K x K");
  }
  for (const auto& row : confusion) {
    if (row.size() != static_cast<std::size_t>(class_count)) {
      throw std::invalid_argument("segmenter spec: confusion matrix must be K x K");
    }
    double sum = 0.0;
    for (const double v : row) {
      if (!(v >= 0.0)) throw std::invalid_argument("segmenter spec: negative confusion entry");
      sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-6) {
      throw std::invalid_argument("segmenter spec: confusion rows must sum to 1");
    }
  }
  if (!(tau_star > 0.0) || !std::isfinite(tau_star)) {
    throw std::invalid_argument("segmenter spec: tau_star must be > 0");
  }
  auto unit = [](double v) { return v >= 0.0 && v <= 1.0; };
  if (!unit(outlier_rate) || !unit(correlation)) {
    throw std::invalid_argument("segmenter spec: rates must lie in [0, 1]");
  }
  if (!(outlier_confidence > 0.0 && outlier_confidence < 1.0)) {
    throw std::invalid_argument("segmenter spec: outlier_confidence must lie in (0, 1)");
  }
  if (!(noise >= 0.0) || !(confidence_spread >= 0.0) || !(correlation_cell > 0.0)) {
    throw std::invalid_argument("segmenter spec: noise, spread and cell size must be >= 0");
  }
  for (const auto& b : view_bias) {
    if (b.from_class >= class_count || b.from_class < -1 || b.to_class < 0 ||
        b.to_class >= class_count) {
      throw std::invalid_argument("segmenter spec: view bias class out of range");
    }
    if (!unit(b.probability)) throw std::invalid_argument("segmenter spec: bad view bias probability");
  }
}

std::vector<float> emulate_segmentation(const PixelContext& ctx, const SegmenterSpec& seg,
                                        std::uint64_t seed, std::mt19937_64& rng) {
  const int k = static_cast<int>(seg.confusion.size());
  const int gt = ctx.gt_class;

  if (seg.outlier_rate > 0.0 && uniform(rng) < seg.outlier_rate) {
    int wrong = static_cast<int>(uniform(rng) * (k - 1));
    wrong = std::min(wrong, k - 2);
    if (wrong >= gt) ++wrong;
    return logits_from(peaked(k, wrong, seg.outlier_confidence), 0.0, seg.tau_star, rng);
  }

  const bool tied = seg.correlation > 0.0 && uniform(rng) < seg.correlation;
  HashStream local{seed};
  if (tied) {
    const Eigen::Vector3d cell = (ctx.world_point / seg.correlation_cell).array().floor();
    std::uint64_t h = splitmix(seed ^ 0x5EEDull);
    for (int a = 0; a < 3; ++a) h = splitmix(h ^ static_cast<std::uint64_t>(static_cast<std::int64_t>(cell[a])));
    local.state = splitmix(h ^ static_cast<std::uint64_t>(gt));
  }
  auto draw = [&] { return tied ? local.uniform() : uniform(rng); };

  const auto& row = seg.confusion[static_cast<std::size_t>(gt)];
  const double c = std::clamp(row[static_cast<std::size_t>(gt)] +
                                  seg.confidence_spread * (draw() - 0.5),
                              0.0, 1.0);
  int favored = gt;
  const double u_correct = draw();
  const double u_wrong = draw();
  const double off_total = 1.0 - row[static_cast<std::size_t>(gt)];
  if (u_correct >= c && off_total > 0.0) {
    double acc = 0.0;
    const double target = u_wrong * off_total;
    favored = -1;
    for (int j = 0; j < k; ++j) {
      if (j == gt) continue;
      acc += row[static_cast<std::size_t>(j)];
      if (target < acc) {
        favored = j;
        break;
      }
    }
    if (favored < 0) favored = gt == k - 1 ? k - 2 : k - 1;
  }

  for (const auto& b : seg.view_bias) {
    if (b.from_class >= 0 && b.from_class != gt) continue;
    if (ctx.incidence_cos > b.max_incidence_cos) continue;
    if (b.region_radius > 0.0 &&
        !in_disc(ctx.camera_position.head<2>(), b.region_center, b.region_radius)) {
      continue;
    }
    if (b.probability >= 1.0 || uniform(rng) < b.probability) favored = b.to_class;
  }

  const double q = std::clamp(c, 1.0 / k + 1e-3, 1.0 - 1e-6);
  return logits_from(peaked(k, favored, q), seg.noise, seg.tau_star, rng);
}

std::optional<RayHit> cast_ray(const SceneSpec& spec, const Eigen::Vector3d& o,
                               const Eigen::Vector3d& d) {
  std::optional<RayHit> best;
  auto offer = [&](double t, int cls, int axis) {
    if (!(t > kRayEps)) return;
    if (best && !(t < best->t)) return;
    RayHit h;
    h.t = t;
    h.class_id = cls;
    h.normal = Eigen::Vector3d::Zero();
    h.normal[axis] = d[axis] > 0.0 ? -1.0 : 1.0;
    best = h;
  };

  if (spec.room.enabled) {
    for (int a = 0; a < 3; ++a) {
      if (d[a] == 0.0) continue;
      const double wall = d[a] > 0.0 ? spec.room.size[a] : 0.0;
      int cls = spec.room.wall_class;
      if (a == 2) cls = wall == 0.0 ? spec.room.floor_class : spec.room.ceiling_class;
      offer((wall - o[a]) / d[a], cls, a);
    }
  }
  for (const auto& b : spec.boxes) {
    double t0 = -std::numeric_limits<double>::infinity();
    double t1 = std::numeric_limits<double>::infinity();
    int entry = 0;
    bool miss = false;
    for (int a = 0; a < 3 && !miss; ++a) {
      if (d[a] == 0.0) {
        if (o[a] < b.min[a] || o[a] > b.max[a]) miss = true;
        continue;
      }
      double ta = (b.min[a] - o[a]) / d[a];
      double tb = (b.max[a] - o[a]) / d[a];
      if (ta > tb) std::swap(ta, tb);
      if (ta > t0) {
        t0 = ta;
        entry = a;
      }
      t1 = std::min(t1, tb);
      if (t0 > t1) miss = true;
    }
    if (!miss) offer(t0, b.class_id, entry);
  }
  for (const auto& p : spec.planes) {
    if (d[p.axis] == 0.0) continue;
    offer((p.offset - o[p.axis]) / d[p.axis], p.class_id, p.axis);
  }
  return best;
}

Eigen::Matrix4d look_at(const Eigen::Vector3d& position, const Eigen::Vector3d& target) {
  const Eigen::Vector3d z = (target - position).normalized();
  Eigen::Vector3d x = z.cross(Eigen::Vector3d::UnitZ());
  if (x.norm() < 1e-9) x = Eigen::Vector3d::UnitX();  // looking straight up or down
  x.normalize();
  const Eigen::Vector3d y = z.cross(x);
  Eigen::Matrix4d pose = Eigen::Matrix4d::Identity();
  pose.block<3, 1>(0, 0) = x;
  pose.block<3, 1>(0, 1) = y;
  pose.block<3, 1>(0, 2) = z;
  pose.block<3, 1>(0, 3) = position;
  return pose;
}

namespace {

double dwell_multiplier(const TrajectorySpec& tr, const Eigen::Vector2d& p) {
  double m = 1.0;
  for (const auto& d : tr.dwell) {
    if (in_disc(p, d.center, d.radius)) m = std::max(m, d.multiplier);
  }
  return m;
}

bool inside_any_box(const SceneSpec& spec, const Eigen::Vector3d& p, double pad) {
  for (const auto& b : spec.boxes) {
    if ((p.array() >= b.min.array() - pad).all() && (p.array() <= b.max.array() + pad).all()) {
      return true;
    }
  }
  return false;
}

}  // namespace

std::vector<Eigen::Matrix4d> generate_trajectory(const SceneSpec& spec) {
  const auto& tr = spec.trajectory;
  std::mt19937_64 rng(splitmix(spec.seed ^ 0x7A11ull));
  auto jitter = [&](double amp) { return amp * (2.0 * uniform(rng) - 1.0); };
  std::vector<Eigen::Matrix4d> poses;
  poses.reserve(static_cast<std::size_t>(tr.frames));

  if (tr.kind == TrajectoryKind::kOrbit) {
    // Frames are spaced uniformly in cumulative dwell density over the orbit.
    constexpr int kSamples = 3600;
    std::vector<double> cumulative(kSamples + 1, 0.0);
    for (int i = 0; i < kSamples; ++i) {
      const double th = 2.0 * std::numbers::pi * (i + 0.5) / kSamples;
      const Eigen::Vector2d p = tr.center + tr.radius * Eigen::Vector2d(std::cos(th), std::sin(th));
      cumulative[static_cast<std::size_t>(i) + 1] =
          cumulative[static_cast<std::size_t>(i)] + dwell_multiplier(tr, p);
    }
    for (int f = 0; f < tr.frames; ++f) {
      const double target = cumulative.back() * (f + 0.5) / tr.frames;
      const auto it = std::lower_bound(cumulative.begin(), cumulative.end(), target);
      const auto i = std::max<std::ptrdiff_t>(1, it - cumulative.begin());
      const double frac = (target - cumulative[static_cast<std::size_t>(i) - 1]) /
                          (cumulative[static_cast<std::size_t>(i)] -
                           cumulative[static_cast<std::size_t>(i) - 1]);
      const double th = 2.0 * std::numbers::pi * (static_cast<double>(i) - 1.0 + frac) / kSamples;
      const Eigen::Vector3d pos(tr.center.x() + tr.radius * std::cos(th),
                                tr.center.y() + tr.radius * std::sin(th),
                                tr.height + jitter(tr.height_jitter));
      const Eigen::Vector3d look(tr.center.x() + jitter(tr.look_jitter),
                                 tr.center.y() + jitter(tr.look_jitter),
                                 tr.look_at_height + jitter(tr.look_jitter));
      poses.push_back(look_at(pos, look));
    }
    return poses;
  }

  Eigen::Vector3d pos = tr.start;
  Eigen::Vector3d lo = Eigen::Vector3d::Constant(-1e9);
  Eigen::Vector3d hi = Eigen::Vector3d::Constant(1e9);
  if (spec.room.enabled) {
    lo = Eigen::Vector3d::Constant(0.3);
    hi = spec.room.size - Eigen::Vector3d::Constant(0.3);
  }
  for (int f = 0; f < tr.frames; ++f) {
    const Eigen::Vector3d cam(pos.x(), pos.y(), tr.start.z() + jitter(tr.height_jitter));
    const Eigen::Vector3d look(tr.center.x() + jitter(tr.look_jitter),
                               tr.center.y() + jitter(tr.look_jitter),
                               tr.look_at_height + jitter(tr.look_jitter));
    poses.push_back(look_at(cam, look));
    const double step = tr.step / dwell_multiplier(tr, pos.head<2>());
    for (int attempt = 0; attempt < 20; ++attempt) {
      const double heading = 2.0 * std::numbers::pi * uniform(rng);
      Eigen::Vector3d next = pos + step * Eigen::Vector3d(std::cos(heading), std::sin(heading), 0.0);
      next = next.cwiseMax(lo).cwiseMin(hi);
      next.z() = tr.start.z();
      if (!inside_any_box(spec, next, 0.2)) {
        pos = next;
        break;
      }
    }
  }
  return poses;
}

Scene render_scene(const SceneSpec& spec, const SegmenterSpec& seg) {
  spec.validate();
  seg.validate(spec.class_count);
  Scene scene;
  scene.intrinsics = spec.intrinsics();
  scene.class_count = spec.class_count;
  scene.class_names = spec.class_names;
  scene.voxel_size = spec.voxel_size;
  const auto [lo, hi] = spec.bounds();
  scene.bounds_min = lo;
  scene.bounds_max = hi;

  const auto poses = generate_trajectory(spec);
  const Intrinsics& in = scene.intrinsics;
  const std::size_t hw = in.pixel_count();
  const auto k = static_cast<std::size_t>(spec.class_count);
  scene.frames.resize(poses.size());

  const auto frame_count = static_cast<std::ptrdiff_t>(poses.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t fi = 0; fi < frame_count; ++fi) {
    Frame& f = scene.frames[static_cast<std::size_t>(fi)];
    f.index = static_cast<std::uint32_t>(fi);
    f.pose = poses[static_cast<std::size_t>(fi)];
    f.depth.assign(hw, 0.0f);
    f.logits.assign(hw * k, 0.0f);
    f.gt_labels.assign(hw, kVoidLabel);
    std::mt19937_64 rng(splitmix(spec.seed * 0x100000001B3ull + static_cast<std::uint64_t>(fi)));
    const Eigen::Matrix3d rot = f.pose.block<3, 3>(0, 0);
    const Eigen::Vector3d origin = f.pose.block<3, 1>(0, 3);
    for (int r = 0; r < in.height; ++r) {
      for (int c = 0; c < in.width; ++c) {
        const std::size_t px = static_cast<std::size_t>(r) * static_cast<std::size_t>(in.width) +
                               static_cast<std::size_t>(c);
        const Eigen::Vector3d dir =
            rot * Eigen::Vector3d((c - in.cx) / in.fx, (r - in.cy) / in.fy, 1.0);
        const auto hit = cast_ray(spec, origin, dir);
        if (!hit) continue;
        f.depth[px] = static_cast<float>(hit->t);
        f.gt_labels[px] = static_cast<std::uint16_t>(hit->class_id);
        PixelContext ctx;
        ctx.gt_class = hit->class_id;
        // Nudged into the surface so cell keys are stable on the boundary.
        ctx.world_point = origin + hit->t * dir - 1e-4 * hit->normal;
        ctx.camera_position = origin;
        ctx.incidence_cos = std::abs(hit->normal.dot(dir)) / dir.norm();
        const auto logits = emulate_segmentation(ctx, seg, spec.seed, rng);
        std::copy(logits.begin(), logits.end(), f.logits.begin() + static_cast<std::ptrdiff_t>(px * k));
      }
    }
  }
  return scene;
}

namespace {

// Distance from p to the axis-aligned rectangle {q : q[axis] = offset,
// lo <= q <= hi on the other axes}.
double rect_distance(const Eigen::Vector3d& p, int axis, double offset, const Eigen::Vector3d& lo,
                     const Eigen::Vector3d& hi) {
  double sq = 0.0;
  for (int a = 0; a < 3; ++a) {
    const double d = a == axis ? p[a] - offset : std::max({lo[a] - p[a], 0.0, p[a] - hi[a]});
    sq += d * d;
  }
  return std::sqrt(sq);
}

double box_surface_distance(const Eigen::Vector3d& p, const SimBox& b) {
  const Eigen::Vector3d out = (b.min - p).cwiseMax(p - b.max).cwiseMax(0.0);
  if (out.squaredNorm() > 0.0) return out.norm();
  return std::min((p - b.min).minCoeff(), (b.max - p).minCoeff());
}

}  // namespace

std::vector<GtVoxel> exact_voxel_labels(const SceneSpec& spec) {
  spec.validate();
  const auto [lo, hi] = spec.bounds();
  const VoxelGrid grid = VoxelGrid::from_bounds(lo, hi, spec.voxel_size);
  std::vector<int> label(grid.size(), -1);
  std::vector<double> dist(grid.size(), 0.0);
  const auto n = static_cast<std::ptrdiff_t>(grid.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const Eigen::Vector3d p = grid.center(static_cast<std::size_t>(i));
    double best = std::numeric_limits<double>::infinity();
    int cls = -1;
    auto offer = [&](double d, int c) {
      if (d < best) {
        best = d;
        cls = c;
      }
    };
    if (spec.room.enabled) {
      const Eigen::Vector3d zero = Eigen::Vector3d::Zero();
      const Eigen::Vector3d& s = spec.room.size;
      offer(rect_distance(p, 2, 0.0, zero, s), spec.room.floor_class);
      offer(rect_distance(p, 2, s.z(), zero, s), spec.room.ceiling_class);
      for (int a = 0; a < 2; ++a) {
        offer(rect_distance(p, a, 0.0, zero, s), spec.room.wall_class);
        offer(rect_distance(p, a, s[a], zero, s), spec.room.wall_class);
      }
    }
    for (const auto& b : spec.boxes) offer(box_surface_distance(p, b), b.class_id);
    for (const auto& pl : spec.planes) offer(std::abs(p[pl.axis] - pl.offset), pl.class_id);
    if (best <= spec.voxel_size) {
      label[static_cast<std::size_t>(i)] = cls;
      dist[static_cast<std::size_t>(i)] = best;
    }
  }
  std::vector<GtVoxel> out;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (label[i] < 0) continue;
    const auto c = grid.coords(i);
    out.push_back({c[0], c[1], c[2], label[i], dist[i]});
  }
  return out;
}

Scene generate_scene(const SceneSpec& spec, const SegmenterSpec& seg,
                     const std::filesystem::path& out) {
  Scene scene = render_scene(spec, seg);
  std::error_code ec;
  std::filesystem::create_directories(out, ec);
  if (ec) throw SceneIoError(out, "cannot create output directory: " + ec.message());
  save_scene(scene, out);
  const auto csv_path = out / "gt_voxels.csv";
  std::ofstream csv(csv_path, std::ios::trunc);
  if (!csv) throw SceneIoError(csv_path, "cannot open for writing");
  csv << "ix,iy,iz,label,distance\n";
  char buf[96];
  for (const auto& v : exact_voxel_labels(spec)) {
    std::snprintf(buf, sizeof buf, "%d,%d,%d,%d,%.9g\n", v.ix, v.iy, v.iz, v.label, v.distance);
    csv << buf;
  }
  if (!csv) throw SceneIoError(csv_path, "write failed");
  return scene;
}

SceneSpec standard_fixture() {
  SceneSpec s;
  s.seed = 7;
  s.class_count = 4;
  s.class_names = {"floor", "wall", "box_a", "box_b"};
  s.room.size = {6.0, 4.0, 3.0};
  s.room.floor_class = 0;
  s.room.wall_class = 1;
  s.room.ceiling_class = 1;
  s.boxes.push_back({{2.0, 1.3, 0.0}, {2.8, 2.1, 0.7}, 2});
  s.boxes.push_back({{3.5, 1.95, 0.0}, {4.1, 2.85, 1.0}, 3});
  return s;
}

SegmenterSpec standard_segmenter(double tau_star, double outlier_rate) {
  SegmenterSpec s = SegmenterSpec::symmetric(4, 0.65);
  s.tau_star = tau_star;
  s.outlier_rate = outlier_rate;
  s.confidence_spread = 0.2;
  s.correlation = 0.95;
  s.correlation_cell = 0.1;
  s.noise = 0.1;
  return s;
}

// ---- JSON ------------------------------------------------------------------

namespace {

void reject_unknown(const json& obj, std::initializer_list<const char*> keys, const char* where) {
  if (!obj.is_object()) throw std::invalid_argument(std::string(where) + ": expected an object");
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (std::find_if(keys.begin(), keys.end(), [&](const char* k) { return it.key() == k; }) ==
        keys.end()) {
      throw std::invalid_argument(std::string(where) + ": unknown key '" + it.key() + "'");
    }
  }
}

template <typename T>
void take(const json& obj, const char* key, T& out) {
  if (obj.contains(key)) out = obj.at(key).get<T>();
}

Eigen::Vector3d vec3(const json& j) {
  const auto v = j.get<std::vector<double>>();
  if (v.size() != 3) throw std::invalid_argument("expected a 3-vector");
  return {v[0], v[1], v[2]};
}

Eigen::Vector2d vec2(const json& j) {
  const auto v = j.get<std::vector<double>>();
  if (v.size() != 2) throw std::invalid_argument("expected a 2-vector");
  return {v[0], v[1]};
}

json to_json(const Eigen::Vector3d& v) { return json::array({v.x(), v.y(), v.z()}); }
json to_json(const Eigen::Vector2d& v) { return json::array({v.x(), v.y()}); }

void parse_trajectory(const json& j, TrajectorySpec& t) {
  reject_unknown(j,
                 {"kind", "frames", "center", "radius", "height", "height_jitter",
                  "look_at_height", "look_jitter", "start", "step", "dwell"},
                 "scene.trajectory");
  if (j.contains("kind")) {
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "orbit") t.kind = TrajectoryKind::kOrbit;
    else if (kind == "random-walk") t.kind = TrajectoryKind::kRandomWalk;
    else throw std::invalid_argument("scene.trajectory.kind must be orbit or random-walk");
  }
  take(j, "frames", t.frames);
  if (j.contains("center")) t.center = vec2(j.at("center"));
  take(j, "radius", t.radius);
  take(j, "height", t.height);
  take(j, "height_jitter", t.height_jitter);
  take(j, "look_at_height", t.look_at_height);
  take(j, "look_jitter", t.look_jitter);
  if (j.contains("start")) t.start = vec3(j.at("start"));
  take(j, "step", t.step);
  if (j.contains("dwell")) {
    t.dwell.clear();
    for (const auto& d : j.at("dwell")) {
      reject_unknown(d, {"center", "radius", "multiplier"}, "scene.trajectory.dwell");
      DwellRegion r;
      r.center = vec2(d.at("center"));
      take(d, "radius", r.radius);
      take(d, "multiplier", r.multiplier);
      t.dwell.push_back(r);
    }
  }
}

void parse_scene(const json& j, SceneSpec& s) {
  reject_unknown(j,
                 {"seed", "class_count", "class_names", "room", "boxes", "planes", "voxel_size",
                  "margin", "width", "height", "hfov_deg", "fx", "fy", "cx", "cy", "trajectory"},
                 "scene");
  take(j, "seed", s.seed);
  take(j, "class_count", s.class_count);
  if (j.contains("class_names")) {
    s.class_names = j.at("class_names").get<std::vector<std::string>>();
  } else if (j.contains("class_count")) {
    s.class_names.clear();
  }
  if (j.contains("room")) {
    const auto& r = j.at("room");
    reject_unknown(r, {"enabled", "size", "floor_class", "wall_class", "ceiling_class"},
                   "scene.room");
    take(r, "enabled", s.room.enabled);
    if (r.contains("size")) s.room.size = vec3(r.at("size"));
    take(r, "floor_class", s.room.floor_class);
    take(r, "wall_class", s.room.wall_class);
    take(r, "ceiling_class", s.room.ceiling_class);
  }
  if (j.contains("boxes")) {
    s.boxes.clear();
    for (const auto& b : j.at("boxes")) {
      reject_unknown(b, {"min", "max", "class"}, "scene.boxes");
      s.boxes.push_back({vec3(b.at("min")), vec3(b.at("max")), b.at("class").get<int>()});
    }
  }
  if (j.contains("planes")) {
    s.planes.clear();
    for (const auto& p : j.at("planes")) {
      reject_unknown(p, {"axis", "offset", "class"}, "scene.planes");
      s.planes.push_back(
          {p.at("axis").get<int>(), p.at("offset").get<double>(), p.at("class").get<int>()});
    }
  }
  take(j, "voxel_size", s.voxel_size);
  take(j, "margin", s.margin);
  take(j, "width", s.width);
  take(j, "height", s.height);
  take(j, "hfov_deg", s.hfov_deg);
  take(j, "fx", s.fx);
  take(j, "fy", s.fy);
  take(j, "cx", s.cx);
  take(j, "cy", s.cy);
  if (j.contains("trajectory")) parse_trajectory(j.at("trajectory"), s.trajectory);
}

void parse_segmenter(const json& j, SegmenterSpec& s, int class_count) {
  reject_unknown(j,
                 {"confusion", "diagonal", "tau_star", "confidence_spread", "correlation",
                  "correlation_cell", "outlier_rate", "outlier_confidence", "noise", "view_bias"},
                 "segmenter");
  if (j.contains("confusion") && j.contains("diagonal")) {
    throw std::invalid_argument("segmenter: give either confusion or diagonal, not both");
  }
  if (j.contains("confusion")) {
    s.confusion = j.at("confusion").get<std::vector<std::vector<double>>>();
  } else if (j.contains("diagonal")) {
    s.confusion = SegmenterSpec::symmetric(class_count, j.at("diagonal").get<double>()).confusion;
  } else if (s.confusion.size() != static_cast<std::size_t>(class_count)) {
    s.confusion = SegmenterSpec::symmetric(class_count, 0.75).confusion;
  }
  take(j, "tau_star", s.tau_star);
  take(j, "confidence_spread", s.confidence_spread);
  take(j, "correlation", s.correlation);
  take(j, "correlation_cell", s.correlation_cell);
  take(j, "outlier_rate", s.outlier_rate);
  take(j, "outlier_confidence", s.outlier_confidence);
  take(j, "noise", s.noise);
  if (j.contains("view_bias")) {
    s.view_bias.clear();
    for (const auto& b : j.at("view_bias")) {
      reject_unknown(b,
                     {"from_class", "to_class", "max_incidence_cos", "region_center",
                      "region_radius", "probability"},
                     "segmenter.view_bias");
      ViewBias v;
      take(b, "from_class", v.from_class);
      v.to_class = b.at("to_class").get<int>();
      take(b, "max_incidence_cos", v.max_incidence_cos);
      if (b.contains("region_center")) v.region_center = vec2(b.at("region_center"));
      take(b, "region_radius", v.region_radius);
      take(b, "probability", v.probability);
      s.view_bias.push_back(v);
    }
  }
}

}  // namespace

SimulationSpec parse_simulation_spec(const std::string& json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(std::string("simulation spec is not valid JSON: ") + e.what());
  }
  reject_unknown(doc, {"scene", "segmenter"}, "simulation spec");
  SimulationSpec out{standard_fixture(), standard_segmenter()};
  try {
    if (doc.contains("scene")) parse_scene(doc.at("scene"), out.scene);
    parse_segmenter(doc.contains("segmenter") ? doc.at("segmenter") : json::object(),
                    out.segmenter, out.scene.class_count);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("simulation spec: ") + e.what());
  }
  out.scene.validate();
  out.segmenter.validate(out.scene.class_count);
  return out;
}

SimulationSpec load_simulation_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw SceneIoError(path, "cannot open simulation spec");
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_simulation_spec(ss.str());
  } catch (const std::invalid_argument& e) {
    throw SceneIoError(path, e.what());
  }
}

std::string simulation_spec_to_json(const SimulationSpec& spec) {
  const SceneSpec& s = spec.scene;
  const TrajectorySpec& t = s.trajectory;
  json scene = {
      {"seed", s.seed},
      {"class_count", s.class_count},
      {"class_names", s.class_names},
      {"room",
       {{"enabled", s.room.enabled},
        {"size", to_json(s.room.size)},
        {"floor_class", s.room.floor_class},
        {"wall_class", s.room.wall_class},
        {"ceiling_class", s.room.ceiling_class}}},
      {"voxel_size", s.voxel_size},
      {"margin", s.margin},
      {"width", s.width},
      {"height", s.height},
      {"hfov_deg", s.hfov_deg},
      {"fx", s.fx},
      {"fy", s.fy},
      {"cx", s.cx},
      {"cy", s.cy},
  };
  scene["boxes"] = json::array();
  for (const auto& b : s.boxes) {
    scene["boxes"].push_back({{"min", to_json(b.min)}, {"max", to_json(b.max)}, {"class", b.class_id}});
  }
  scene["planes"] = json::array();
  for (const auto& p : s.planes) {
    scene["planes"].push_back({{"axis", p.axis}, {"offset", p.offset}, {"class", p.class_id}});
  }
  json traj = {{"kind", t.kind == TrajectoryKind::kOrbit ? "orbit" : "random-walk"},
               {"frames", t.frames},
               {"center", to_json(t.center)},
               {"radius", t.radius},
               {"height", t.height},
               {"height_jitter", t.height_jitter},
               {"look_at_height", t.look_at_height},
               {"look_jitter", t.look_jitter},
               {"start", to_json(t.start)},
               {"step", t.step}};
  traj["dwell"] = json::array();
  for (const auto& d : t.dwell) {
    traj["dwell"].push_back(
        {{"center", to_json(d.center)}, {"radius", d.radius}, {"multiplier", d.multiplier}});
  }
  scene["trajectory"] = traj;

  const SegmenterSpec& g = spec.segmenter;
  json seg = {{"confusion", g.confusion},
              {"tau_star", g.tau_star},
              {"confidence_spread", g.confidence_spread},
              {"correlation", g.correlation},
              {"correlation_cell", g.correlation_cell},
              {"outlier_rate", g.outlier_rate},
              {"outlier_confidence", g.outlier_confidence},
              {"noise", g.noise}};
  seg["view_bias"] = json::array();
  for (const auto& b : g.view_bias) {
    seg["view_bias"].push_back({{"from_class", b.from_class},
                                {"to_class", b.to_class},
                                {"max_incidence_cos", b.max_incidence_cos},
                                {"region_center", to_json(b.region_center)},
                                {"region_radius", b.region_radius},
                                {"probability", b.probability}});
  }
  return json({{"scene", scene}, {"segmenter", seg}}).dump(2) + "\n";
}

}  // namespace semfuse
