#include <doctest.h>

#include <algorithm>
#include <numeric>

#include "semfuse/simulator.hpp"
#include "semfuse/tsdf.hpp"

using namespace semfuse;

namespace {

// 3×3 camera at the origin looking down +z with a fronto-parallel depth image.
Intrinsics tiny_intrinsics() { return {10.0, 10.0, 1.0, 1.0, 3, 3}; }

Frame flat_frame(float depth, std::uint32_t index = 0) {
  Frame f;
  f.index = index;
  f.depth.assign(9, depth);
  f.logits.assign(9 * 2, 0.0f);
  return f;
}

// Single voxel whose centre sits at (0, 0, z).
VoxelGrid voxel_at(double z, double truncation = 0.4) {
  return VoxelGrid({-0.05, -0.05, z - 0.05}, 0.1, {1, 1, 1}, truncation);
}

}  // namespace

TEST_SUITE("tsdf") {

TEST_CASE("grid invariants") {
  CHECK_THROWS_AS(VoxelGrid({0, 0, 0}, 0.0, {1, 1, 1}), std::invalid_argument);
  CHECK_THROWS_AS(VoxelGrid({0, 0, 0}, 0.1, {0, 1, 1}), std::invalid_argument);
  CHECK_THROWS_AS(VoxelGrid({0, 0, 0}, 0.1, {1, 1, 1}, 0.05), std::invalid_argument);
  const VoxelGrid g({0, 0, 0}, 0.1, {2, 3, 4});
  CHECK(g.truncation() == doctest::Approx(0.4));
  CHECK(g.size() == 24);
  const auto c = g.coords(g.linear_index(1, 2, 3));
  CHECK(c == std::array<int, 3>{1, 2, 3});
  CHECK((g.center(g.linear_index(1, 2, 3)) - Eigen::Vector3d(0.15, 0.25, 0.35)).norm() < 1e-12);
}

TEST_CASE("first observation sets the value, second averages") {
  VoxelGrid g = voxel_at(1.9);
  const Intrinsics intr = tiny_intrinsics();
  CHECK(integrate_depth_frame(g, intr, flat_frame(2.0f)) == 1);
  CHECK(g.sdf(0) == doctest::Approx(0.1).epsilon(1e-6));
  CHECK(g.weight(0) == 1.0f);
  integrate_depth_frame(g, intr, flat_frame(2.1f, 1));
  CHECK(g.sdf(0) == doctest::Approx(0.15).epsilon(1e-6));
  CHECK(g.weight(0) == 2.0f);
}

TEST_CASE("occluded voxels are untouched and far-side deltas clamp") {
  VoxelGrid g = voxel_at(1.9, 0.2);
  const Intrinsics intr = tiny_intrinsics();
  CHECK(integrate_depth_frame(g, intr, flat_frame(static_cast<float>(1.9 - 3 * 0.2))) == 0);
  CHECK(g.weight(0) == 0.0f);
  integrate_depth_frame(g, intr, flat_frame(5.0f));
  CHECK(g.sdf(0) == doctest::Approx(0.2));
}

TEST_CASE("intrinsics mismatch is rejected") {
  VoxelGrid g = voxel_at(1.0);
  Frame f = flat_frame(1.0f);
  f.depth.pop_back();
  CHECK_THROWS_AS(integrate_depth_frame(g, tiny_intrinsics(), f), std::invalid_argument);
}

TEST_CASE("weighted mean is order independent and weight counts frames") {
  const std::vector<float> depths{2.0f, 1.95f, 2.07f, 1.99f, 2.11f, 1.93f};
  std::vector<int> order(depths.size());
  std::iota(order.begin(), order.end(), 0);
  double mean = 0.0;
  for (float d : depths) mean += std::min(static_cast<double>(d) - 1.9, 0.4);
  mean /= static_cast<double>(depths.size());
  for (int perm = 0; perm < 5; ++perm) {
    std::next_permutation(order.begin(), order.end());
    VoxelGrid g = voxel_at(1.9);
    for (int i : order) integrate_depth_frame(g, tiny_intrinsics(), flat_frame(depths[i]));
    CHECK(g.weight(0) == static_cast<float>(depths.size()));
    CHECK(g.sdf(0) == doctest::Approx(mean).epsilon(1e-5));
  }
}

TEST_CASE("voxels outside the frustum are never modified") {
  VoxelGrid g({-2.0, -2.0, -1.0}, 0.1, {40, 40, 40});
  integrate_depth_frame(g, tiny_intrinsics(), flat_frame(1.5f));
  const Intrinsics intr = tiny_intrinsics();
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (!project_camera_point(g.center(i), intr)) REQUIRE(g.weight(i) == 0.0f);
  }
}

TEST_CASE("surface extraction band") {
  VoxelGrid empty({0, 0, 0}, 0.1, {3, 3, 3});
  CHECK(extract_surface_voxels(empty).empty());

  VoxelGrid g({0, 0, 0}, 0.1, {3, 1, 1});
  g.weight_data() = {1.0f, 1.0f, 0.0f};
  g.sdf_data() = {static_cast<float>(g.truncation()), 0.05f, 0.0f};
  const auto s = extract_surface_voxels(g);
  REQUIRE(s.size() == 1);
  CHECK(s[0] == 1);
}

TEST_CASE("plane scene surface voxels hug the plane") {
  SceneSpec spec;
  spec.room.enabled = false;
  spec.class_count = 2;
  spec.class_names = {"floor", "other"};
  spec.planes = {{2, 0.0, 0}};
  spec.voxel_size = 0.05;
  spec.width = 80;
  spec.height = 60;
  spec.trajectory.frames = 6;
  spec.trajectory.center = {0.0, 0.0};
  spec.trajectory.radius = 0.5;
  spec.trajectory.height = 1.0;
  spec.trajectory.look_at_height = 0.0;
  // Grid bounds are derived from geometry; give the plane a finite extent.
  spec.boxes = {};
  SegmenterSpec seg = SegmenterSpec::symmetric(2, 1.0);
  Scene scene = render_scene(spec, seg);
  VoxelGrid g = VoxelGrid::from_bounds({-1.5, -1.5, -0.3}, {1.5, 1.5, 0.3}, 0.05);
  for (const Frame& f : scene.frames) integrate_depth_frame(g, scene.intrinsics, f);
  const auto surf = extract_surface_voxels(g);
  REQUIRE(surf.size() > 100);
  for (std::size_t v : surf) REQUIRE(std::abs(g.center(v).z()) < 0.05 + 1e-9);
  CHECK(assign_ground_truth(g, scene, surf) > 0);
  for (std::size_t v : surf) {
    const auto l = g.gt_label(v);
    CHECK((l == 0 || l == VoxelGrid::kUnlabeled));
  }
}

TEST_CASE("ground-truth votes, ties and unseen voxels") {
  const Intrinsics intr{10.0, 10.0, 1.0, 1.0, 3, 3};
  Scene scene;
  scene.intrinsics = intr;
  scene.class_count = 5;
  auto add = [&](std::uint16_t label) {
    Frame f = flat_frame(2.0f, static_cast<std::uint32_t>(scene.frames.size()));
    f.logits.assign(9 * 5, 0.0f);
    f.gt_labels.assign(9, label);
    scene.frames.push_back(f);
  };
  // Voxel 0 at z = 2 is visible; voxel 1 sits far to the side.
  VoxelGrid g({-0.05, -0.05, 1.95}, 0.1, {1, 1, 1});
  const std::vector<std::size_t> vox{0};

  for (int i = 0; i < 5; ++i) add(3);
  CHECK(assign_ground_truth(g, scene, vox) == 1);
  CHECK(g.gt_label(0) == 3);

  scene.frames.clear();
  add(4);
  add(1);
  add(4);
  add(1);
  assign_ground_truth(g, scene, vox);
  CHECK(g.gt_label(0) == 1);

  VoxelGrid far({5.0, 5.0, 1.95}, 0.1, {1, 1, 1});
  CHECK(assign_ground_truth(far, scene, vox) == 0);
  CHECK(far.gt_label(0) == VoxelGrid::kUnlabeled);

  scene.frames[2].gt_labels.clear();
  CHECK_THROWS_AS(assign_ground_truth(g, scene, vox), std::invalid_argument);
}

TEST_CASE("depth normals face the camera") {
  const Intrinsics intr{50.0, 50.0, 4.5, 4.5, 10, 10};
  std::vector<float> depth(100, 2.0f);
  const auto n = estimate_depth_normals(depth, intr);
  const Eigen::Vector3f c = n[5 * 10 + 5];
  CHECK(c.z() == doctest::Approx(-1.0).epsilon(1e-4));
}

}
