#pragma once

#include <atomic>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include <Eigen/Geometry>

#include "semfuse/frames.hpp"

namespace semfuse::test {

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("semfuse_" + tag + "_" + std::to_string(::getpid()) + "_" +
             std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

inline Scene random_scene(int frames, int width, int height, int k, std::uint64_t seed,
                          bool labels = true) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(-5.0f, 5.0f);
  std::uniform_real_distribution<float> d(0.3f, 4.0f);
  Scene s;
  s.intrinsics = {100.0, 101.0, width / 2.0, height / 2.0, width, height};
  s.class_count = k;
  s.voxel_size = 0.05;
  for (int i = 0; i < frames; ++i) {
    Frame f;
    f.index = static_cast<std::uint32_t>(2 * i + 1);
    const double a = 0.3 * i + 0.1;
    f.pose.topLeftCorner<3, 3>() =
        Eigen::AngleAxisd(a, Eigen::Vector3d(0.2, 1.0, 0.3).normalized()).toRotationMatrix();
    f.pose.topRightCorner<3, 1>() = Eigen::Vector3d(0.1 * i, -0.7, 1.3 + 1e-7 * i);
    const std::size_t hw = s.intrinsics.pixel_count();
    for (std::size_t p = 0; p < hw; ++p) f.depth.push_back(d(rng));
    for (std::size_t p = 0; p < hw * k; ++p) f.logits.push_back(u(rng));
    if (labels) {
      for (std::size_t p = 0; p < hw; ++p) f.gt_labels.push_back(static_cast<std::uint16_t>(rng() % k));
    }
    s.frames.push_back(std::move(f));
  }
  return s;
}

}  // namespace semfuse::test
