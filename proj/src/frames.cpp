#include "semfuse/frames.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <Eigen/LU>

#include "binary_io.hpp"

namespace semfuse {

namespace fs = std::filesystem;

void Intrinsics::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) {
    throw std::invalid_argument("intrinsics: focal lengths must be positive");
  }
  if (width <= 0 || height <= 0) {
    throw std::invalid_argument("intrinsics: image size must be positive");
  }
  if (!(cx >= 0.0 && cx < width) || !(cy >= 0.0 && cy < height)) {
    throw std::invalid_argument(
        "intrinsics: principal point must lie inside the image");
  }
}

void Scene::validate() const {
  intrinsics.validate();
  if (class_count < 2) throw std::invalid_argument("scene: class_count must be >= 2");
  if (!(voxel_size > 0.0)) throw std::invalid_argument("scene: voxel_size must be > 0");
  if (frames.empty()) throw std::invalid_argument("scene: no frames");
  if (!class_names.empty() &&
      class_names.size() != static_cast<std::size_t>(class_count)) {
    throw std::invalid_argument("scene: class_names size differs from class_count");
  }
  const std::size_t hw = intrinsics.pixel_count();
  const std::size_t k = static_cast<std::size_t>(class_count);
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const Frame& f = frames[i];
    const std::string name = "frame " + frame_stem(f.index);
    if (i > 0 && f.index <= frames[i - 1].index) {
      throw std::invalid_argument(name + ": frame indices must be strictly increasing");
    }
    if (!is_rigid(f.pose)) throw std::invalid_argument(name + ": pose is not rigid");
    if (f.depth.size() != hw) {
      throw std::invalid_argument(name + ": depth has " + std::to_string(f.depth.size()) +
                                  " values, expected " + std::to_string(hw));
    }
    if (f.logits.size() != hw * k) {
      throw std::invalid_argument(name + ": logits have " + std::to_string(f.logits.size()) +
                                  " values, expected " + std::to_string(hw * k));
    }
    if (f.has_gt() && f.gt_labels.size() != hw) {
      throw std::invalid_argument(name + ": gt labels have wrong size");
    }
    if (f.has_color() && f.color.size() != hw * 3) {
      throw std::invalid_argument(name + ": color has wrong size");
    }
  }
}

std::optional<Projection> project_camera_point(const Eigen::Vector3d& p_cam,
                                               const Intrinsics& intr) {
  if (!(p_cam.z() > 0.0)) return std::nullopt;
  Projection p;
  p.z = p_cam.z();
  p.u = intr.fx * p_cam.x() / p.z + intr.cx;
  p.v = intr.fy * p_cam.y() / p.z + intr.cy;
  const double col = std::nearbyint(p.u);
  const double row = std::nearbyint(p.v);
  if (!(col >= 0.0 && col < intr.width && row >= 0.0 && row < intr.height)) {
    return std::nullopt;
  }
  p.col = static_cast<int>(col);
  p.row = static_cast<int>(row);
  return p;
}

Eigen::Matrix4d invert_rigid(const Eigen::Matrix4d& pose) {
  Eigen::Matrix4d inv = Eigen::Matrix4d::Identity();
  const Eigen::Matrix3d rt = pose.topLeftCorner<3, 3>().transpose();
  inv.topLeftCorner<3, 3>() = rt;
  inv.topRightCorner<3, 1>() = -rt * pose.topRightCorner<3, 1>();
  return inv;
}

bool is_rigid(const Eigen::Matrix4d& pose, double tol) {
  const Eigen::Matrix3d r = pose.topLeftCorner<3, 3>();
  if (!((r.transpose() * r - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() <= tol)) {
    return false;
  }
  if (r.determinant() < 0.0) return false;
  return pose(3, 0) == 0.0 && pose(3, 1) == 0.0 && pose(3, 2) == 0.0 && pose(3, 3) == 1.0;
}

std::optional<Projection> project_point(const Eigen::Vector3d& p_world,
                                        const Eigen::Matrix4d& pose,
                                        const Intrinsics& intr) {
  const Eigen::Matrix3d r = pose.topLeftCorner<3, 3>();
  const Eigen::Vector3d t = pose.topRightCorner<3, 1>();
  return project_camera_point(r.transpose() * (p_world - t), intr);
}

Eigen::Vector3d back_project(double u, double v, double z,
                             const Eigen::Matrix4d& pose,
                             const Intrinsics& intr) {
  const Eigen::Vector3d p_cam((u - intr.cx) * z / intr.fx,
                              (v - intr.cy) * z / intr.fy, z);
  return pose.topLeftCorner<3, 3>() * p_cam + pose.topRightCorner<3, 1>();
}

std::string frame_stem(std::uint32_t index) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%06u", index);
  return buf;
}

namespace {

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

double parse_double(const std::string& text, const fs::path& file,
                    const std::string& key) {
  const char* begin = text.c_str();
  char* end = nullptr;
  const double v = std::strtod(begin, &end);
  if (end == begin || *end != '\0') {
    throw SceneIoError(file, "cannot parse value of '" + key + "': " + text);
  }
  return v;
}

int parse_int(const std::string& text, const fs::path& file, const std::string& key) {
  int v = 0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
    throw SceneIoError(file, "cannot parse integer '" + key + "': " + text);
  }
  return v;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, sep)) out.push_back(item);
  return out;
}

Eigen::Vector3d parse_vec3(const std::string& text, const fs::path& file,
                           const std::string& key) {
  const auto parts = split(text, ',');
  if (parts.size() != 3) throw SceneIoError(file, "'" + key + "' needs 3 values");
  return {parse_double(parts[0], file, key), parse_double(parts[1], file, key),
          parse_double(parts[2], file, key)};
}

std::map<std::string, std::string> read_meta(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw SceneIoError(file, "missing or unreadable file");
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw SceneIoError(file, "malformed line: " + line);
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

Eigen::Matrix4d read_pose(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw SceneIoError(file, "missing or unreadable file");
  Eigen::Matrix4d pose;
  for (int i = 0; i < 16; ++i) {
    std::string token;
    if (!(in >> token)) throw SceneIoError(file, "truncated pose: expected 16 values");
    pose(i / 4, i % 4) = parse_double(token, file, "pose");
  }
  return pose;
}

void write_pose(const fs::path& file, const Eigen::Matrix4d& pose) {
  std::ofstream out(file, std::ios::trunc);
  if (!out) throw SceneIoError(file, "cannot open for writing");
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < 4; ++c) {
      out << format_double(pose(r, c)) << (c == 3 ? '\n' : ' ');
    }
  }
}

}  // namespace

Scene load_scene(const fs::path& dir) {
  const fs::path meta_file = dir / "scene.meta";
  const auto meta = read_meta(meta_file);
  auto require = [&](const std::string& key) -> const std::string& {
    const auto it = meta.find(key);
    if (it == meta.end()) throw SceneIoError(meta_file, "missing key '" + key + "'");
    return it->second;
  };

  Scene scene;
  scene.voxel_size = parse_double(require("voxel_size"), meta_file, "voxel_size");
  scene.class_count = parse_int(require("class_count"), meta_file, "class_count");
  scene.intrinsics.width = parse_int(require("width"), meta_file, "width");
  scene.intrinsics.height = parse_int(require("height"), meta_file, "height");
  scene.intrinsics.fx = parse_double(require("fx"), meta_file, "fx");
  scene.intrinsics.fy = parse_double(require("fy"), meta_file, "fy");
  scene.intrinsics.cx = parse_double(require("cx"), meta_file, "cx");
  scene.intrinsics.cy = parse_double(require("cy"), meta_file, "cy");
  if (const auto it = meta.find("class_names"); it != meta.end() && !it->second.empty()) {
    scene.class_names = split(it->second, ',');
  }
  if (const auto it = meta.find("bounds_min"); it != meta.end()) {
    scene.bounds_min = parse_vec3(it->second, meta_file, "bounds_min");
  }
  if (const auto it = meta.find("bounds_max"); it != meta.end()) {
    scene.bounds_max = parse_vec3(it->second, meta_file, "bounds_max");
  }
  try {
    scene.intrinsics.validate();
  } catch (const std::invalid_argument& e) {
    throw SceneIoError(meta_file, e.what());
  }
  if (scene.class_count < 2) throw SceneIoError(meta_file, "class_count must be >= 2");

  // Any file carrying a frame stem registers that frame; each registered
  // frame must then provide pose, depth and logits.
  const fs::path frames_dir = dir / "frames";
  if (!fs::is_directory(frames_dir)) throw SceneIoError(frames_dir, "missing frames directory");
  std::set<std::uint32_t> indices;
  for (const auto& entry : fs::directory_iterator(frames_dir)) {
    const std::string name = entry.path().filename().string();
    const auto dot = name.find('.');
    if (dot != 6) continue;
    std::uint32_t idx = 0;
    const auto res = std::from_chars(name.data(), name.data() + 6, idx);
    if (res.ec == std::errc() && res.ptr == name.data() + 6) indices.insert(idx);
  }
  if (indices.empty()) throw SceneIoError(frames_dir, "no frames found");

  const std::size_t hw = scene.intrinsics.pixel_count();
  const std::size_t k = static_cast<std::size_t>(scene.class_count);
  for (const std::uint32_t idx : indices) {
    const std::string stem = frame_stem(idx);
    Frame f;
    f.index = idx;
    f.pose = read_pose(frames_dir / (stem + ".pose.txt"));
    f.depth = detail::read_raw<float>(frames_dir / (stem + ".depth.f32"), hw,
                                      "depth of frame " + stem);
    f.logits = detail::read_raw<float>(frames_dir / (stem + ".logits.f32"), hw * k,
                                       "logits of frame " + stem + " (H*W*K)");
    if (const fs::path p = frames_dir / (stem + ".labels.u16"); fs::exists(p)) {
      f.gt_labels = detail::read_raw<std::uint16_t>(p, hw, "labels of frame " + stem);
    }
    if (const fs::path p = frames_dir / (stem + ".color.rgb8"); fs::exists(p)) {
      f.color = detail::read_raw<std::uint8_t>(p, hw * 3, "color of frame " + stem);
    }
    scene.frames.push_back(std::move(f));
  }
  return scene;
}

void save_scene(const Scene& scene, const fs::path& dir) {
  scene.validate();
  fs::create_directories(dir / "frames");
  {
    const fs::path meta_file = dir / "scene.meta";
    std::ofstream out(meta_file, std::ios::trunc);
    if (!out) throw SceneIoError(meta_file, "cannot open for writing");
    const Intrinsics& in = scene.intrinsics;
    out << "voxel_size=" << format_double(scene.voxel_size) << '\n'
        << "class_count=" << scene.class_count << '\n'
        << "width=" << in.width << '\n'
        << "height=" << in.height << '\n'
        << "fx=" << format_double(in.fx) << '\n'
        << "fy=" << format_double(in.fy) << '\n'
        << "cx=" << format_double(in.cx) << '\n'
        << "cy=" << format_double(in.cy) << '\n';
    if (!scene.class_names.empty()) {
      out << "class_names=";
      for (std::size_t i = 0; i < scene.class_names.size(); ++i) {
        out << (i ? "," : "") << scene.class_names[i];
      }
      out << '\n';
    }
    auto vec = [](const Eigen::Vector3d& v) {
      return format_double(v.x()) + "," + format_double(v.y()) + "," + format_double(v.z());
    };
    if (scene.bounds_min) out << "bounds_min=" << vec(*scene.bounds_min) << '\n';
    if (scene.bounds_max) out << "bounds_max=" << vec(*scene.bounds_max) << '\n';
    if (!out) throw SceneIoError(meta_file, "write failed");
  }
  const fs::path frames_dir = dir / "frames";
  for (const Frame& f : scene.frames) {
    const std::string stem = frame_stem(f.index);
    write_pose(frames_dir / (stem + ".pose.txt"), f.pose);
    detail::write_raw<float>(frames_dir / (stem + ".depth.f32"), f.depth);
    detail::write_raw<float>(frames_dir / (stem + ".logits.f32"), f.logits);
    if (f.has_gt()) {
      detail::write_raw<std::uint16_t>(frames_dir / (stem + ".labels.u16"), f.gt_labels);
    }
    if (f.has_color()) {
      detail::write_raw<std::uint8_t>(frames_dir / (stem + ".color.rgb8"), f.color);
    }
  }
}

}  // namespace semfuse
