#include <doctest.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>

#include "semfuse/fusion.hpp"
#include "semfuse/pipeline.hpp"
#include "semfuse/simulator.hpp"
#include "test_util.hpp"

using namespace semfuse;
using semfuse::test::TempDir;

namespace {

SceneSpec small_fixture() {
  SceneSpec s = standard_fixture();
  s.width = 96;
  s.height = 72;
  s.voxel_size = 0.1;
  s.trajectory.frames = 24;
  return s;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Surface voxels confidently and wrongly predicted as `cls`.
std::size_t confident_errors(const VoxelMap& map, int cls, double threshold = 0.9) {
  std::size_t n = 0;
  for (const auto& v : map.voxels) {
    if (v.gt_label >= 0 && v.gt_label != cls && v.pred_label() == cls && v.confidence() > threshold) {
      ++n;
    }
  }
  return n;
}

}  // namespace

TEST_SUITE("simulator") {

TEST_CASE("floor plane depth is the analytic ray-plane distance") {
  SceneSpec spec;
  spec.room.enabled = false;
  spec.class_count = 2;
  spec.planes = {{2, 0.0, 0}};
  spec.width = 64;
  spec.height = 48;
  spec.trajectory.frames = 4;
  spec.trajectory.center = {0.0, 0.0};
  spec.trajectory.look_at_height = 0.0;
  const Scene scene = render_scene(spec, SegmenterSpec::symmetric(2, 1.0));
  const Intrinsics in = scene.intrinsics;
  std::size_t checked = 0;
  for (const Frame& f : scene.frames) {
    const Eigen::Matrix3d rot = f.pose.topLeftCorner<3, 3>();
    const Eigen::Vector3d o = f.pose.topRightCorner<3, 1>();
    for (int r = 0; r < in.height; ++r) {
      for (int c = 0; c < in.width; ++c) {
        const std::size_t px = static_cast<std::size_t>(r) * in.width + c;
        const Eigen::Vector3d dir = rot * Eigen::Vector3d((c - in.cx) / in.fx, (r - in.cy) / in.fy, 1.0);
        if (dir.z() >= 0.0) {
          CHECK(f.depth[px] == 0.0f);
          CHECK(f.gt_labels[px] == kVoidLabel);
          continue;
        }
        const double t = -o.z() / dir.z();
        CHECK(f.gt_labels[px] == 0);
        if (t < 8.0) {
          CHECK(std::abs(f.depth[px] - t) < 1e-6);
          ++checked;
        }
      }
    }
  }
  CHECK(checked > 1000);
}

TEST_CASE("cast_ray hits the nearest surface") {
  SceneSpec spec = standard_fixture();
  const auto hit = cast_ray(spec, {1.0, 1.7, 0.35}, {1.0, 0.0, 0.0});
  REQUIRE(hit);
  CHECK(hit->t == doctest::Approx(1.0));
  CHECK(hit->class_id == 2);
  CHECK(hit->normal.x() == doctest::Approx(-1.0));
  const auto up = cast_ray(spec, {1.0, 1.0, 1.0}, {0.0, 0.0, 1.0});
  REQUIRE(up);
  CHECK(up->t == doctest::Approx(2.0));
  CHECK(up->class_id == spec.room.ceiling_class);
  spec.room.enabled = false;
  CHECK_FALSE(cast_ray(spec, {1.0, 1.0, 1.0}, {0.0, 0.0, 1.0}));
}

TEST_CASE("look_at builds a rigid camera looking at the target") {
  const Eigen::Matrix4d pose = look_at({1.0, 2.0, 1.5}, {3.0, 2.0, 0.3});
  CHECK(is_rigid(pose));
  const Intrinsics in{100, 100, 50, 50, 101, 101};
  const auto p = project_point({3.0, 2.0, 0.3}, pose, in);
  REQUIRE(p);
  CHECK(p->u == doctest::Approx(50.0));
  CHECK(p->v == doctest::Approx(50.0));
  // y points down: a point above the target projects to a smaller row.
  const auto q = project_point({3.0, 2.0, 0.8}, pose, in);
  REQUIRE(q);
  CHECK(q->v < 50.0);
}

TEST_CASE("same seed gives byte-identical output") {
  TempDir dir("sim_det");
  const SceneSpec spec = small_fixture();
  const SegmenterSpec seg = standard_segmenter();
  generate_scene(spec, seg, dir / "a");
  generate_scene(spec, seg, dir / "b");
  std::size_t files = 0;
  for (const auto& e : std::filesystem::recursive_directory_iterator(dir / "a")) {
    if (!e.is_regular_file()) continue;
    const auto rel = std::filesystem::relative(e.path(), dir / "a");
    REQUIRE(slurp(e.path()) == slurp(dir / "b" / rel));
    ++files;
  }
  CHECK(files > 24 * 3);

  SceneSpec other = spec;
  other.seed = 8;
  const Scene a = render_scene(spec, seg);
  const Scene b = render_scene(other, seg);
  CHECK(a.frames[0].logits != b.frames[0].logits);
}

TEST_CASE("every visible box face is seen by the standard orbit") {
  const SceneSpec spec = standard_fixture();
  const auto poses = generate_trajectory(spec);
  REQUIRE(poses.size() == 60);
  const Intrinsics in = spec.intrinsics();
  // (class, axis, sign) of faces hit.
  std::set<std::tuple<int, int, int>> seen;
  for (const auto& pose : poses) {
    const Eigen::Matrix3d rot = pose.topLeftCorner<3, 3>();
    const Eigen::Vector3d o = pose.topRightCorner<3, 1>();
    for (int r = 0; r < in.height; r += 2) {
      for (int c = 0; c < in.width; c += 2) {
        const auto hit = cast_ray(spec, o, rot * Eigen::Vector3d((c - in.cx) / in.fx, (r - in.cy) / in.fy, 1.0));
        if (!hit || hit->class_id < 2) continue;
        for (int a = 0; a < 3; ++a) {
          if (std::abs(hit->normal[a]) > 0.5) seen.insert({hit->class_id, a, hit->normal[a] > 0 ? 1 : -1});
        }
      }
    }
  }
  for (const auto& box : spec.boxes) {
    for (int a = 0; a < 3; ++a) {
      for (int sign : {-1, 1}) {
        if (a == 2 && sign == -1) continue;  // resting on the floor
        INFO("class " << box.class_id << " axis " << a << " sign " << sign);
        CHECK(seen.count({box.class_id, a, sign}) == 1);
      }
    }
  }
}

TEST_CASE("identity segmenter recovers labels") {
  SegmenterSpec seg = SegmenterSpec::symmetric(4, 1.0);
  std::mt19937_64 rng(1);
  for (int gt = 0; gt < 4; ++gt) {
    PixelContext ctx;
    ctx.gt_class = gt;
    const auto l = emulate_segmentation(ctx, seg, 7, rng);
    std::vector<double> d(l.begin(), l.end());
    CHECK(argmax(softmax(d)) == gt);
  }
}

TEST_CASE("lower tau* gives more confident output") {
  SegmenterSpec a = SegmenterSpec::symmetric(4, 0.7);
  SegmenterSpec b = a;
  b.tau_star = 0.5;
  for (int i = 0; i < 200; ++i) {
    PixelContext ctx;
    ctx.gt_class = i % 4;
    std::mt19937_64 r1(i), r2(i);
    const auto la = emulate_segmentation(ctx, a, 3, r1);
    const auto lb = emulate_segmentation(ctx, b, 3, r2);
    std::vector<double> da(la.begin(), la.end()), db(lb.begin(), lb.end());
    const auto pa = softmax(da), pb = softmax(db);
    REQUIRE(argmax(pa) == argmax(pb));
    CHECK(pb[static_cast<std::size_t>(argmax(pb))] > pa[static_cast<std::size_t>(argmax(pa))]);
  }
}

TEST_CASE("outliers are near one-hot and uniformly wrong") {
  const int k = 4;
  SegmenterSpec seg = SegmenterSpec::symmetric(k, 1.0);
  seg.outlier_rate = 1.0;
  seg.outlier_confidence = 0.99;
  std::mt19937_64 rng(11);
  const int n = 20000;
  std::vector<int> hits(k, 0);
  int near_one_hot = 0;
  for (int i = 0; i < n; ++i) {
    PixelContext ctx;
    ctx.gt_class = 1;
    const auto l = emulate_segmentation(ctx, seg, 5, rng);
    std::vector<double> d(l.begin(), l.end());
    const auto p = softmax(d);
    const int top = argmax(p);
    ++hits[static_cast<std::size_t>(top)];
    near_one_hot += p[static_cast<std::size_t>(top)] > 0.98;
  }
  CHECK(near_one_hot == n);
  CHECK(hits[1] == 0);
  // Each wrong class ~ n/(K-1); 5 sigma band.
  const double expect = static_cast<double>(n) / (k - 1);
  const double sigma = std::sqrt(n * (1.0 / (k - 1)) * (1.0 - 1.0 / (k - 1)));
  for (int c : {0, 2, 3}) CHECK(std::abs(hits[static_cast<std::size_t>(c)] - expect) < 5 * sigma);
}

TEST_CASE("identity segmenter gives perfect voxel accuracy for every strategy") {
  const SceneSpec spec = small_fixture();
  const Scene scene = render_scene(spec, SegmenterSpec::symmetric(4, 1.0));
  for (auto s : {FusionStrategy::kRbu, FusionStrategy::kGeometricMean,
                 FusionStrategy::kNaiveAveraging, FusionStrategy::kHistogram}) {
    FuseOptions o;
    o.fusion.strategy = s;
    const auto r = run_fuse(scene, o);
    const auto preds = r.map.predictions();
    REQUIRE(preds.size() > 500);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) correct += preds.pred(i) == preds.gt(i);
    CHECK(correct == preds.size());
  }
}

TEST_CASE("overconfident segmenter: RBU is worse calibrated than averaging") {
  const SceneSpec spec = small_fixture();
  const Scene scene = render_scene(spec, standard_segmenter(0.5, 0.02));
  FuseOptions rbu, avg;
  avg.fusion.strategy = FusionStrategy::kNaiveAveraging;
  const double m_rbu = compute_mece(run_fuse(scene, rbu).map.predictions());
  const double m_avg = compute_mece(run_fuse(scene, avg).map.predictions());
  CHECK(m_rbu > m_avg);
}

TEST_CASE("dwelling where the view is biased adds confident errors") {
  SceneSpec spec = small_fixture();
  spec.trajectory.frames = 40;
  const Eigen::Vector2d region = spec.trajectory.center + Eigen::Vector2d(spec.trajectory.radius, 0.0);
  SegmenterSpec seg = standard_segmenter(1.0, 0.0);
  seg.view_bias.push_back({0, 3, 1.0, region, 0.7, 0.8});
  const auto run = [&](double multiplier) {
    SceneSpec s = spec;
    s.trajectory.dwell = {{region, 0.7, multiplier}};
    return confident_errors(run_fuse(render_scene(s, seg), {}).map, 3);
  };
  const std::size_t base = run(1.0);
  const std::size_t dwell = run(8.0);
  MESSAGE("confident errors: multiplier 1 -> " << base << ", multiplier 8 -> " << dwell);
  CHECK(dwell > base + base / 4 + 10);
}

TEST_CASE("exact labels lie near surfaces") {
  const SceneSpec spec = small_fixture();
  const auto gt = exact_voxel_labels(spec);
  REQUIRE(!gt.empty());
  std::set<int> classes;
  for (const auto& v : gt) {
    CHECK(v.distance <= spec.voxel_size + 1e-12);
    classes.insert(v.label);
  }
  CHECK(classes.size() == 4);
}

TEST_CASE("spec validation and JSON") {
  SceneSpec s = standard_fixture();
  s.class_count = 1;
  s.class_names.clear();
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
  s = standard_fixture();
  s.boxes[0].class_id = 9;
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
  s = standard_fixture();
  s.room.enabled = false;
  s.boxes.clear();
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);

  SegmenterSpec g = standard_segmenter();
  g.confusion[0][0] += 0.1;
  CHECK_THROWS_AS(g.validate(4), std::invalid_argument);
  g = standard_segmenter();
  g.tau_star = 0.0;
  CHECK_THROWS_AS(g.validate(4), std::invalid_argument);

  const SimulationSpec def{standard_fixture(), standard_segmenter()};
  const auto text = simulation_spec_to_json(def);
  const auto back = parse_simulation_spec(text);
  CHECK(simulation_spec_to_json(back) == text);
  const auto partial = parse_simulation_spec(R"({"scene": {"seed": 3}, "segmenter": {"tau_star": 0.25}})");
  CHECK(partial.scene.seed == 3);
  CHECK(partial.segmenter.tau_star == 0.25);
  CHECK(partial.scene.boxes.size() == 2);
  CHECK_THROWS(parse_simulation_spec(R"({"scene": {"seeed": 3}})"));
  CHECK_THROWS(parse_simulation_spec("{not json"));
}

}
