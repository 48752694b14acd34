#include <doctest.h>

#include <cstring>
#include <fstream>

#include "semfuse/frames.hpp"
#include "test_util.hpp"

using namespace semfuse;
using semfuse::test::TempDir;

TEST_SUITE("frames") {

TEST_CASE("optical axis projects to the principal point") {
  const Intrinsics intr{100.0, 100.0, 160.0, 120.0, 320, 240};
  const auto p = project_point({0.0, 0.0, 1.0}, Eigen::Matrix4d::Identity(), intr);
  REQUIRE(p);
  CHECK(p->u == doctest::Approx(160.0));
  CHECK(p->v == doctest::Approx(120.0));
  CHECK(p->z == doctest::Approx(1.0));
  CHECK(p->col == 160);
  CHECK(p->row == 120);
}

TEST_CASE("points behind the camera are out of view") {
  const Intrinsics intr{100.0, 100.0, 160.0, 120.0, 320, 240};
  CHECK_FALSE(project_point({0.0, 0.0, -0.5}, Eigen::Matrix4d::Identity(), intr));
  CHECK_FALSE(project_point({0.0, 0.0, 0.0}, Eigen::Matrix4d::Identity(), intr));
}

TEST_CASE("hand-evaluated pinhole") {
  const Intrinsics intr{100.0, 100.0, 160.0, 120.0, 320, 240};
  const auto p = project_point({0.1, 0.0, 1.0}, Eigen::Matrix4d::Identity(), intr);
  REQUIRE(p);
  CHECK(p->u == doctest::Approx(170.0));
  CHECK(p->z == doctest::Approx(1.0));
}

TEST_CASE("nearest-pixel rounding and image border") {
  const Intrinsics intr{100.0, 100.0, 1.5, 1.5, 4, 4};
  // u = 3.4 rounds to column 3, u = 3.6 rounds to 4 which is outside
  auto p = project_camera_point({0.019, 0.0, 1.0}, intr);
  REQUIRE(p);
  CHECK(p->col == 3);
  CHECK_FALSE(project_camera_point({0.021, 0.0, 1.0}, intr));
}

TEST_CASE("project then back-project round-trips") {
  const Intrinsics intr{277.0, 277.0, 159.5, 119.5, 320, 240};
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  int tested = 0;
  for (int i = 0; i < 500; ++i) {
    Eigen::Matrix4d pose = Eigen::Matrix4d::Identity();
    pose.topLeftCorner<3, 3>() =
        Eigen::AngleAxisd(3.0 * u(rng), Eigen::Vector3d(u(rng), u(rng), u(rng)).normalized())
            .toRotationMatrix();
    pose.topRightCorner<3, 1>() = Eigen::Vector3d(u(rng), u(rng), u(rng)) * 3.0;
    const Eigen::Vector3d p_cam(u(rng), u(rng), 2.0 + u(rng));
    const Eigen::Vector3d p_world =
        pose.topLeftCorner<3, 3>() * p_cam + pose.topRightCorner<3, 1>();
    const auto proj = project_point(p_world, pose, intr);
    if (!proj) continue;
    ++tested;
    const Eigen::Vector3d back = back_project(proj->u, proj->v, proj->z, pose, intr);
    CHECK((back - p_world).norm() < 1e-6);
  }
  CHECK(tested > 100);
}

TEST_CASE("invert_rigid and is_rigid") {
  Eigen::Matrix4d pose = Eigen::Matrix4d::Identity();
  pose.topLeftCorner<3, 3>() = Eigen::AngleAxisd(0.7, Eigen::Vector3d::UnitY()).toRotationMatrix();
  pose.topRightCorner<3, 1>() = Eigen::Vector3d(1, 2, 3);
  CHECK(is_rigid(pose));
  CHECK((invert_rigid(pose) * pose - Eigen::Matrix4d::Identity()).norm() < 1e-12);
  pose(0, 0) *= 1.1;
  CHECK_FALSE(is_rigid(pose));
}

TEST_CASE("intrinsics invariants") {
  CHECK_NOTHROW(Intrinsics({100, 100, 160, 120, 320, 240}).validate());
  CHECK_THROWS_AS(Intrinsics({0, 100, 160, 120, 320, 240}).validate(), std::invalid_argument);
  CHECK_THROWS_AS(Intrinsics({100, 100, 160, 120, 0, 240}).validate(), std::invalid_argument);
}

TEST_CASE("save/load is bit-exact") {
  TempDir dir("frames_rt");
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    Scene s = test::random_scene(2, 7, 5, 3, seed);
    s.class_names = {"a", "b", "c"};
    s.bounds_min = Eigen::Vector3d(-1.0, -2.0, 0.1);
    s.bounds_max = Eigen::Vector3d(1.0 / 3.0, 2.0, 3.0);
    s.frames[1].color.assign(7 * 5 * 3, 9);
    const auto d = dir / ("s" + std::to_string(seed));
    save_scene(s, d);
    const Scene r = load_scene(d);
    CHECK(r.intrinsics == s.intrinsics);
    CHECK(r.class_count == s.class_count);
    CHECK(r.class_names == s.class_names);
    CHECK(r.voxel_size == s.voxel_size);
    REQUIRE(r.bounds_min);
    CHECK(*r.bounds_min == *s.bounds_min);
    CHECK(*r.bounds_max == *s.bounds_max);
    REQUIRE(r.frames.size() == s.frames.size());
    for (std::size_t i = 0; i < s.frames.size(); ++i) {
      const Frame& a = s.frames[i];
      const Frame& b = r.frames[i];
      CHECK(a.index == b.index);
      CHECK(std::memcmp(a.pose.data(), b.pose.data(), sizeof(double) * 16) == 0);
      CHECK(std::memcmp(a.depth.data(), b.depth.data(), a.depth.size() * 4) == 0);
      CHECK(std::memcmp(a.logits.data(), b.logits.data(), a.logits.size() * 4) == 0);
      CHECK(a.gt_labels == b.gt_labels);
      CHECK(a.color == b.color);
    }
  }
}

TEST_CASE("truncated logits name the frame") {
  TempDir dir("frames_trunc");
  Scene s = test::random_scene(2, 6, 4, 3, 11);
  save_scene(s, dir.path());
  const auto stem = frame_stem(s.frames[1].index);
  const auto file = dir.path() / "frames" / (stem + ".logits.f32");
  std::filesystem::resize_file(file, (6 * 4 * 3 - 1) * sizeof(float));
  try {
    load_scene(dir.path());
    FAIL("expected an error");
  } catch (const SceneIoError& e) {
    const std::string msg = e.what();
    CHECK(msg.find(stem) != std::string::npos);
    CHECK(msg.find("expected 72") != std::string::npos);
    CHECK(e.file() == file);
  }
}

TEST_CASE("missing pose file is reported") {
  TempDir dir("frames_pose");
  Scene s = test::random_scene(3, 4, 3, 2, 5);
  s.frames[0].index = 1;
  s.frames[1].index = 3;
  s.frames[2].index = 4;
  save_scene(s, dir.path());
  const auto file = dir.path() / "frames" / "000003.pose.txt";
  std::filesystem::remove(file);
  try {
    load_scene(dir.path());
    FAIL("expected an error");
  } catch (const SceneIoError& e) {
    CHECK(e.file() == file);
  }
}

TEST_CASE("missing meta and invalid frames") {
  TempDir dir("frames_meta");
  CHECK_THROWS_AS(load_scene(dir.path()), SceneIoError);

  Scene s = test::random_scene(2, 4, 3, 2, 5);
  s.frames[1].logits.pop_back();
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
  CHECK_THROWS(save_scene(s, dir / "x"));

  Scene t = test::random_scene(2, 4, 3, 2, 5);
  t.frames[1].index = t.frames[0].index;
  CHECK_THROWS_AS(t.validate(), std::invalid_argument);
}

TEST_CASE("frame stems are zero padded") {
  CHECK(frame_stem(3) == "000003");
  CHECK(frame_stem(123456) == "123456");
}

}
