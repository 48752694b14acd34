#include "semfuse/planar.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <utility>

namespace semfuse {

PlanarMap::PlanarMap(Eigen::Vector2d origin, double cell_size, int rows, int cols,
                     int class_count)
    : origin_(std::move(origin)),
      cell_size_(cell_size),
      rows_(rows),
      cols_(cols),
      class_count_(class_count) {
  if (!(cell_size > 0.0)) throw std::invalid_argument("planar map: cell size must be > 0");
  if (rows < 0 || cols < 0 || class_count < 1) {
    throw std::invalid_argument("planar map: bad dimensions");
  }
  const std::size_t n = static_cast<std::size_t>(rows) * cols * class_count;
  sum_.assign(n, 0.0);
  count_.assign(n, 0);
}

std::size_t PlanarMap::slot(int row, int col, int cls) const {
  return (static_cast<std::size_t>(row) * cols_ + col) * class_count_ + cls;
}

Eigen::Vector2d PlanarMap::cell_center(int row, int col) const {
  return origin_ + cell_size_ * Eigen::Vector2d(col + 0.5, row + 0.5);
}

void PlanarMap::add(int row, int col, int cls, double confidence) {
  const std::size_t s = slot(row, col, cls);
  sum_[s] += confidence;
  ++count_[s];
}

std::uint32_t PlanarMap::count(int row, int col, int cls) const { return count_[slot(row, col, cls)]; }

double PlanarMap::confidence(int row, int col, int cls) const {
  const std::size_t s = slot(row, col, cls);
  return count_[s] == 0 ? 0.0 : sum_[s] / count_[s];
}

bool PlanarMap::known(int row, int col) const { return top_label(row, col) >= 0; }

int PlanarMap::top_label(int row, int col) const {
  int best = -1;
  double best_conf = -1.0;
  for (int k = 0; k < class_count_; ++k) {
    if (count(row, col, k) == 0) continue;
    const double c = confidence(row, col, k);
    if (c > best_conf) {
      best_conf = c;
      best = k;
    }
  }
  return best;
}

double PlanarMap::top_confidence(int row, int col) const {
  const int k = top_label(row, col);
  return k < 0 ? 0.0 : confidence(row, col, k);
}

std::size_t PlanarMap::populated_cells() const {
  std::size_t n = 0;
  for (int r = 0; r < rows_; ++r) {
    for (int c = 0; c < cols_; ++c) n += known(r, c) ? 1 : 0;
  }
  return n;
}

PlanarMap project_to_planar_map(std::span<const PlanarVoxel> voxels, int class_count,
                                const PlanarConfig& config) {
  if (!(config.cell_size > 0.0)) throw std::invalid_argument("planar map: cell size must be > 0");
  if (voxels.empty()) return PlanarMap({0.0, 0.0}, config.cell_size, 0, 0, class_count);
  Eigen::Vector2d lo = Eigen::Vector2d::Constant(std::numeric_limits<double>::infinity());
  Eigen::Vector2d hi = -lo;
  for (const auto& v : voxels) {
    lo = lo.cwiseMin(v.center.head<2>());
    hi = hi.cwiseMax(v.center.head<2>());
  }
  const Eigen::Vector2d origin = (lo / config.cell_size).array().floor() * config.cell_size;
  auto index = [&](double x, double o) {
    return static_cast<int>(std::floor((x - o) / config.cell_size));
  };
  const int cols = index(hi.x(), origin.x()) + 1;
  const int rows = index(hi.y(), origin.y()) + 1;
  PlanarMap map(origin, config.cell_size, rows, cols, class_count);
  for (const auto& v : voxels) {
    if (v.center.z() < config.z_min || v.center.z() > config.z_max) continue;
    if (v.label < 0 || v.label >= class_count) {
      throw std::invalid_argument("planar map: voxel label out of range");
    }
    const int c = std::clamp(index(v.center.x(), origin.x()), 0, cols - 1);
    const int r = std::clamp(index(v.center.y(), origin.y()), 0, rows - 1);
    map.add(r, c, v.label, v.confidence);
  }
  return map;
}

std::size_t Mask2D::count() const {
  return static_cast<std::size_t>(std::count(data.begin(), data.end(), std::uint8_t{1}));
}

Mask2D threshold(const PlanarMap& map, int cls, double theta) {
  Mask2D m(map.rows(), map.cols());
  for (int r = 0; r < map.rows(); ++r) {
    for (int c = 0; c < map.cols(); ++c) {
      m.set(r, c, map.count(r, c, cls) > 0 && map.confidence(r, c, cls) >= theta);
    }
  }
  return m;
}

Mask2D largest_connected_component(const Mask2D& mask) {
  Mask2D out(mask.rows, mask.cols);
  std::vector<int> comp(mask.data.size(), -1);
  std::vector<std::pair<int, int>> stack;
  int best = -1;
  std::size_t best_size = 0;
  int next = 0;
  // Row-major scan: the first cell visited in each component is its smallest
  // (row, col), so a strict '>' keeps the earliest on ties.
  for (int r = 0; r < mask.rows; ++r) {
    for (int c = 0; c < mask.cols; ++c) {
      const std::size_t i = static_cast<std::size_t>(r) * mask.cols + c;
      if (!mask.data[i] || comp[i] >= 0) continue;
      const int id = next++;
      std::size_t size = 0;
      comp[i] = id;
      stack.assign(1, {r, c});
      while (!stack.empty()) {
        const auto [y, x] = stack.back();
        stack.pop_back();
        ++size;
        constexpr int dy[4] = {-1, 1, 0, 0};
        constexpr int dx[4] = {0, 0, -1, 1};
        for (int d = 0; d < 4; ++d) {
          const int ny = y + dy[d];
          const int nx = x + dx[d];
          if (ny < 0 || nx < 0 || ny >= mask.rows || nx >= mask.cols) continue;
          const std::size_t j = static_cast<std::size_t>(ny) * mask.cols + nx;
          if (mask.data[j] && comp[j] < 0) {
            comp[j] = id;
            stack.emplace_back(ny, nx);
          }
        }
      }
      if (size > best_size) {
        best_size = size;
        best = id;
      }
    }
  }
  for (std::size_t i = 0; i < comp.size(); ++i) out.data[i] = comp[i] == best && best >= 0 ? 1 : 0;
  return out;
}

}  // namespace semfuse
