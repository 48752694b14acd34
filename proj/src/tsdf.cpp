#include "semfuse/tsdf.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <Eigen/Geometry>

namespace semfuse {

VoxelGrid::VoxelGrid(const Eigen::Vector3d& origin, double voxel_size,
                     const std::array<int, 3>& dims, double truncation)
    : origin_(origin),
      voxel_size_(voxel_size),
      dims_(dims),
      truncation_(truncation > 0.0 ? truncation : 4.0 * voxel_size) {
  if (!(voxel_size > 0.0)) throw std::invalid_argument("VoxelGrid: voxel_size must be > 0");
  if (dims[0] < 1 || dims[1] < 1 || dims[2] < 1) {
    throw std::invalid_argument("VoxelGrid: dims must be >= 1");
  }
  if (truncation_ < voxel_size) {
    throw std::invalid_argument("VoxelGrid: truncation must be >= voxel_size");
  }
  const std::size_t n = static_cast<std::size_t>(dims[0]) * static_cast<std::size_t>(dims[1]) *
                        static_cast<std::size_t>(dims[2]);
  sdf_.assign(n, 0.0f);
  weight_.assign(n, 0.0f);
  gt_label_.assign(n, kUnlabeled);
}

VoxelGrid VoxelGrid::from_bounds(const Eigen::Vector3d& min, const Eigen::Vector3d& max,
                                 double voxel_size, double truncation) {
  std::array<int, 3> dims{};
  for (int a = 0; a < 3; ++a) {
    dims[static_cast<std::size_t>(a)] =
        std::max(1, static_cast<int>(std::ceil((max[a] - min[a]) / voxel_size - 1e-9)));
  }
  return VoxelGrid(min, voxel_size, dims, truncation);
}

std::array<int, 3> VoxelGrid::coords(std::size_t index) const {
  const auto nx = static_cast<std::size_t>(dims_[0]);
  const auto ny = static_cast<std::size_t>(dims_[1]);
  return {static_cast<int>(index % nx), static_cast<int>((index / nx) % ny),
          static_cast<int>(index / (nx * ny))};
}

Eigen::Vector3d VoxelGrid::center(std::size_t index) const {
  const auto c = coords(index);
  return origin_ + voxel_size_ * Eigen::Vector3d(c[0] + 0.5, c[1] + 0.5, c[2] + 0.5);
}

std::array<float, 3> VoxelGrid::color(std::size_t i) const {
  if (color_.empty()) return {0.0f, 0.0f, 0.0f};
  return {color_[3 * i], color_[3 * i + 1], color_[3 * i + 2]};
}

std::vector<float>& VoxelGrid::color_data() {
  if (color_.empty()) color_.assign(3 * sdf_.size(), 0.0f);
  return color_;
}

std::vector<Eigen::Vector3f> estimate_depth_normals(std::span<const float> depth,
                                                    const Intrinsics& intr) {
  const int w = intr.width;
  const int h = intr.height;
  auto point = [&](int r, int c, Eigen::Vector3f& p) {
    const float d = depth[static_cast<std::size_t>(r) * w + c];
    if (!(d > 0.0f) || !std::isfinite(d)) return false;
    p = Eigen::Vector3f(static_cast<float>((c - intr.cx) / intr.fx) * d,
                        static_cast<float>((r - intr.cy) / intr.fy) * d, d);
    return true;
  };
  std::vector<Eigen::Vector3f> normals(static_cast<std::size_t>(w) * h);
#pragma omp parallel for schedule(static)
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const Eigen::Vector3f ray =
          Eigen::Vector3f(static_cast<float>((c - intr.cx) / intr.fx),
                          static_cast<float>((r - intr.cy) / intr.fy), 1.0f)
              .normalized();
      Eigen::Vector3f n = -ray;
      Eigen::Vector3f p0, pl, pr, pu, pd;
      if (point(r, c, p0)) {
        const bool has_l = c > 0 && point(r, c - 1, pl);
        const bool has_r = c + 1 < w && point(r, c + 1, pr);
        const bool has_u = r > 0 && point(r - 1, c, pu);
        const bool has_d = r + 1 < h && point(r + 1, c, pd);
        if ((has_l || has_r) && (has_u || has_d)) {
          const Eigen::Vector3f dx = (has_r ? pr : p0) - (has_l ? pl : p0);
          const Eigen::Vector3f dy = (has_d ? pd : p0) - (has_u ? pu : p0);
          Eigen::Vector3f cand = dx.cross(dy);
          const float len = cand.norm();
          if (len > 0.0f) {
            cand /= len;
            if (cand.dot(ray) > 0.0f) cand = -cand;
            n = cand;
          }
        }
      }
      normals[static_cast<std::size_t>(r) * w + c] = n;
    }
  }
  return normals;
}

std::size_t integrate_depth_frame(VoxelGrid& grid, const Intrinsics& intr, const Frame& frame,
                                  const IntegrationConfig& config, ObservationSink* sink) {
  if (frame.depth.size() != intr.pixel_count()) {
    throw std::invalid_argument("integrate_depth_frame: frame " + frame_stem(frame.index) +
                                " does not match the scene intrinsics");
  }
  const double trunc = grid.truncation();
  const double band = config.semantic_band > 0.0 ? config.semantic_band : grid.voxel_size();
  const auto normals = estimate_depth_normals(frame.depth, intr);

  const Eigen::Matrix3d rt = frame.pose.topLeftCorner<3, 3>().transpose();
  const Eigen::Vector3d t = frame.pose.topRightCorner<3, 1>();
  const Eigen::Vector3d step_x = rt * Eigen::Vector3d(grid.voxel_size(), 0.0, 0.0);
  const auto dims = grid.dims();
  const bool with_color = frame.has_color();
  std::vector<float>& sdf = grid.sdf_data();
  std::vector<float>& weight = grid.weight_data();
  float* color = with_color ? grid.color_data().data() : nullptr;
  const int width = intr.width;

  std::size_t updated = 0;
#pragma omp parallel for schedule(static) reduction(+ : updated)
  for (int iz = 0; iz < dims[2]; ++iz) {
    for (int iy = 0; iy < dims[1]; ++iy) {
      const std::size_t row_start = grid.linear_index(0, iy, iz);
      Eigen::Vector3d p_cam = rt * (grid.center(row_start) - t);
      for (int ix = 0; ix < dims[0]; ++ix, p_cam += step_x) {
        const auto proj = project_camera_point(p_cam, intr);
        if (!proj) continue;
        const std::size_t pixel = static_cast<std::size_t>(proj->row) * width + proj->col;
        const float d = frame.depth[pixel];
        if (!(d > 0.0f) || !std::isfinite(d)) continue;
        const double delta = static_cast<double>(d) - proj->z;
        if (delta < -trunc) continue;
        const double clamped = std::min(delta, trunc);

        const double distance = p_cam.norm();
        const Eigen::Vector3f ray = (p_cam / distance).cast<float>();
        const float incidence = std::clamp(-ray.dot(normals[pixel]), -1.0f, 1.0f);
        const double wt = sample_weight(distance, incidence, config.weights);

        const std::size_t v = row_start + static_cast<std::size_t>(ix);
        const double w_old = weight[v];
        const double w_new = w_old + wt;
        sdf[v] = static_cast<float>((w_old * sdf[v] + wt * clamped) / w_new);
        if (color != nullptr) {
          for (int ch = 0; ch < 3; ++ch) {
            const double c = frame.color[3 * pixel + static_cast<std::size_t>(ch)];
            float& dst = color[3 * v + static_cast<std::size_t>(ch)];
            dst = static_cast<float>((w_old * dst + wt * c) / w_new);
          }
        }
        weight[v] = static_cast<float>(w_new);
        ++updated;

        if (sink != nullptr && std::abs(delta) <= band) {
          sink->observe(v, pixel, static_cast<float>(distance), incidence);
        }
      }
    }
  }
  return updated;
}

std::vector<std::size_t> extract_surface_voxels(const VoxelGrid& grid, double band) {
  const double b = band > 0.0 ? band : grid.voxel_size();
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (grid.weight(i) > 0.0f && std::abs(grid.sdf(i)) < b) out.push_back(i);
  }
  return out;
}

std::size_t assign_ground_truth(VoxelGrid& grid, const Scene& scene,
                                std::span<const std::size_t> voxels, double semantic_band) {
  for (const Frame& f : scene.frames) {
    if (!f.has_gt()) {
      throw std::invalid_argument("assign_ground_truth: frame " + frame_stem(f.index) +
                                  " has no ground-truth labels");
    }
  }
  const double band = semantic_band > 0.0 ? semantic_band : grid.voxel_size();
  const auto k = static_cast<std::size_t>(scene.class_count);
  const Intrinsics& intr = scene.intrinsics;

  std::vector<Eigen::Matrix3d> rts;
  std::vector<Eigen::Vector3d> ts;
  for (const Frame& f : scene.frames) {
    rts.push_back(f.pose.topLeftCorner<3, 3>().transpose());
    ts.push_back(f.pose.topRightCorner<3, 1>());
  }

  auto& labels = grid.gt_label_data();
  std::size_t labeled = 0;
  const auto n = static_cast<std::ptrdiff_t>(voxels.size());
#pragma omp parallel for schedule(static) reduction(+ : labeled)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const std::size_t v = voxels[static_cast<std::size_t>(i)];
    const Eigen::Vector3d p = grid.center(v);
    std::vector<std::uint32_t> votes(k, 0);
    std::uint32_t total = 0;
    for (std::size_t f = 0; f < scene.frames.size(); ++f) {
      const auto proj = project_camera_point(rts[f] * (p - ts[f]), intr);
      if (!proj) continue;
      const std::size_t pixel = static_cast<std::size_t>(proj->row) * intr.width + proj->col;
      const float d = scene.frames[f].depth[pixel];
      if (!(d > 0.0f) || !std::isfinite(d)) continue;
      if (std::abs(static_cast<double>(d) - proj->z) > band) continue;
      const std::uint16_t label = scene.frames[f].gt_labels[pixel];
      if (label >= k) continue;
      ++votes[label];
      ++total;
    }
    if (total == 0) {
      labels[v] = VoxelGrid::kUnlabeled;
      continue;
    }
    std::size_t best = 0;
    for (std::size_t c = 1; c < k; ++c) {
      if (votes[c] > votes[best]) best = c;
    }
    labels[v] = static_cast<std::int16_t>(best);
    ++labeled;
  }
  return labeled;
}

}  // namespace semfuse
