#include <doctest.h>

#include <random>
#include <set>

#include "semfuse/planar.hpp"

using namespace semfuse;

namespace {

Mask2D from_rows(const std::vector<std::string>& rows) {
  Mask2D m(static_cast<int>(rows.size()), static_cast<int>(rows[0].size()));
  for (int r = 0; r < m.rows; ++r) {
    for (int c = 0; c < m.cols; ++c) m.set(r, c, rows[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)] == '#');
  }
  return m;
}

}  // namespace

TEST_SUITE("planar") {

TEST_CASE("single voxel sets its cell") {
  const std::vector<PlanarVoxel> v{{{0.52, 0.31, 1.0}, 2, 0.7}};
  const auto map = project_to_planar_map(v, 4);
  REQUIRE(map.populated_cells() == 1);
  int found = 0;
  for (int r = 0; r < map.rows(); ++r) {
    for (int c = 0; c < map.cols(); ++c) {
      if (!map.known(r, c)) continue;
      ++found;
      CHECK(map.confidence(r, c, 2) == doctest::Approx(0.7));
      CHECK(map.confidence(r, c, 1) == 0.0);
      CHECK(map.top_label(r, c) == 2);
      const auto centre = map.cell_center(r, c);
      CHECK(std::abs(centre.x() - 0.52) <= 0.025 + 1e-12);
      CHECK(std::abs(centre.y() - 0.31) <= 0.025 + 1e-12);
    }
  }
  CHECK(found == 1);
}

TEST_CASE("same cell same class averages") {
  const std::vector<PlanarVoxel> v{{{0.51, 0.51, 0.5}, 1, 0.6}, {{0.52, 0.53, 1.5}, 1, 0.8}};
  const auto map = project_to_planar_map(v, 2);
  REQUIRE(map.populated_cells() == 1);
  for (int r = 0; r < map.rows(); ++r) {
    for (int c = 0; c < map.cols(); ++c) {
      if (map.known(r, c)) {
        CHECK(map.confidence(r, c, 1) == doctest::Approx(0.7));
        CHECK(map.count(r, c, 1) == 2);
      }
    }
  }
}

TEST_CASE("two classes in one cell are independent") {
  const std::vector<PlanarVoxel> v{{{0.51, 0.51, 0.5}, 0, 0.9}, {{0.52, 0.52, 0.6}, 3, 0.4}};
  const auto map = project_to_planar_map(v, 4);
  REQUIRE(map.populated_cells() == 1);
  for (int r = 0; r < map.rows(); ++r) {
    for (int c = 0; c < map.cols(); ++c) {
      if (!map.known(r, c)) continue;
      CHECK(map.confidence(r, c, 0) == doctest::Approx(0.9));
      CHECK(map.confidence(r, c, 3) == doctest::Approx(0.4));
      CHECK(map.top_label(r, c) == 0);
      CHECK(map.top_confidence(r, c) == doctest::Approx(0.9));
    }
  }
}

TEST_CASE("height band filters voxels") {
  const std::vector<PlanarVoxel> v{{{0.0, 0.0, 0.05}, 0, 0.9}, {{0.3, 0.0, 2.5}, 1, 0.9}};
  CHECK(project_to_planar_map(v, 2).populated_cells() == 0);
  PlanarConfig all;
  all.z_min = -1.0;
  all.z_max = 3.0;
  CHECK(project_to_planar_map(v, 2, all).populated_cells() == 2);
}

TEST_CASE("populated cells never exceed voxel footprints") {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 2.0);
  std::vector<PlanarVoxel> v;
  std::set<std::pair<long, long>> columns;
  for (int i = 0; i < 500; ++i) {
    const double x = std::round(u(rng) / 0.05) * 0.05 + 0.025;
    const double y = std::round(u(rng) / 0.05) * 0.05 + 0.025;
    v.push_back({{x, y, 0.2 + 0.5 * u(rng)}, static_cast<int>(rng() % 3), 0.5});
    columns.insert({std::lround(x * 1000), std::lround(y * 1000)});
  }
  CHECK(project_to_planar_map(v, 3).populated_cells() <= columns.size());
}

TEST_CASE("threshold uses mean confidence") {
  PlanarMap m({0.0, 0.0}, 0.1, 2, 2, 2);
  m.add(0, 0, 1, 0.9);
  m.add(0, 1, 1, 0.4);
  m.add(1, 1, 1, 0.6);
  m.add(1, 1, 1, 0.4);
  const auto t = threshold(m, 1, 0.5);
  CHECK(t.at(0, 0));
  CHECK_FALSE(t.at(0, 1));
  CHECK(t.at(1, 1) == true);
  CHECK_FALSE(t.at(1, 0));
  CHECK(m.top_label(1, 0) == -1);
}

TEST_CASE("largest component wins") {
  const auto m = from_rows({
      "##...",
      "##..#",
      "#...#",
      "....#",
  });
  const auto f = largest_connected_component(m);
  CHECK(f == from_rows({
                 "##...",
                 "##...",
                 "#....",
                 ".....",
             }));
  CHECK(f.count() == 5);
}

TEST_CASE("empty mask and diagonal neighbours") {
  const Mask2D empty(3, 4);
  CHECK(largest_connected_component(empty) == empty);
  // Diagonal cells are not 4-connected.
  const auto d = from_rows({"#.", ".#"});
  CHECK(largest_connected_component(d).count() == 1);
  CHECK(largest_connected_component(d).at(0, 0));
}

TEST_CASE("ties go to the lexicographically first component") {
  const auto m = from_rows({
      "...##",
      "...##",
      "##...",
      "##...",
  });
  const auto f = largest_connected_component(m);
  CHECK(f == from_rows({
                 "...##",
                 "...##",
                 ".....",
                 ".....",
             }));
}

TEST_CASE("filtering is idempotent") {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    Mask2D m(12, 15);
    for (auto& v : m.data) v = (rng() % 3 == 0) ? 1 : 0;
    const auto once = largest_connected_component(m);
    CHECK(largest_connected_component(once) == once);
  }
}

}
