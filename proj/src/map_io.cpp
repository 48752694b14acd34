#include "semfuse/map_io.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "semfuse/frames.hpp"

namespace semfuse {

namespace {

using json = nlohmann::json;
namespace fs = std::filesystem;

std::ofstream open_out(const fs::path& file) {
  if (file.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(file.parent_path(), ec);
  }
  std::ofstream out(file, std::ios::trunc);
  if (!out) throw SceneIoError(file, "cannot open for writing");
  return out;
}

json read_json(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw SceneIoError(file, "cannot open");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw SceneIoError(file, std::string("invalid JSON: ") + e.what());
  }
}

void write_json(const json& j, const fs::path& file) {
  auto out = open_out(file);
  out << j.dump(2) << "\n";
  if (!out) throw SceneIoError(file, "write failed");
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  return out;
}

json summary_json(const MetricSummary& m) {
  return {{"ece", m.ece},     {"tl_ece", m.tl_ece}, {"mece", m.mece}, {"brier", m.brier},
          {"nll", m.nll},     {"miou", m.miou},     {"count", m.count}};
}

MetricSummary summary_from(const json& j) {
  MetricSummary m;
  m.ece = j.at("ece").get<double>();
  m.tl_ece = j.at("tl_ece").get<double>();
  m.mece = j.at("mece").get<double>();
  m.brier = j.at("brier").get<double>();
  m.nll = j.at("nll").get<double>();
  m.miou = j.at("miou").get<double>();
  m.count = j.at("count").get<std::size_t>();
  return m;
}

// strtof rather than stof: subnormal probabilities are valid values here.
float parse_float(const std::string& s) {
  char* end = nullptr;
  const float v = std::strtof(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0') throw std::invalid_argument("not a number");
  return v;
}

}  // namespace

int VoxelMapEntry::pred_label() const {
  std::vector<double> p(probs.begin(), probs.end());
  return argmax(p);
}

float VoxelMapEntry::confidence() const { return probs[static_cast<std::size_t>(pred_label())]; }

Eigen::Vector3d VoxelMap::center(const VoxelMapEntry& v) const {
  return origin + voxel_size * Eigen::Vector3d(v.ix + 0.5, v.iy + 0.5, v.iz + 0.5);
}

PredictionSet VoxelMap::predictions() const {
  PredictionSet preds(class_count);
  preds.reserve(voxels.size());
  std::vector<double> p(static_cast<std::size_t>(class_count));
  for (const auto& v : voxels) {
    if (v.gt_label < 0) continue;
    std::copy(v.probs.begin(), v.probs.end(), p.begin());
    preds.add(p, v.gt_label);
  }
  return preds;
}

std::vector<PlanarVoxel> VoxelMap::planar_voxels() const {
  std::vector<PlanarVoxel> out;
  out.reserve(voxels.size());
  for (const auto& v : voxels) out.push_back({center(v), v.pred_label(), v.confidence()});
  return out;
}

void save_voxel_map(const VoxelMap& map, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw SceneIoError(dir, "cannot create output directory: " + ec.message());
  json meta = {{"origin", {map.origin.x(), map.origin.y(), map.origin.z()}},
               {"voxel_size", map.voxel_size},
               {"dims", map.dims},
               {"truncation", map.truncation},
               {"class_count", map.class_count},
               {"class_names", map.class_names},
               {"fusion", map.fusion},
               {"weights", map.weights},
               {"laplace_alpha", map.laplace_alpha},
               {"calibration", map.calibration},
               {"voxel_count", map.voxels.size()}};
  write_json(meta, dir / "map.json");

  const fs::path csv_path = dir / "map.csv";
  auto out = open_out(csv_path);
  out << "ix,iy,iz,sdf,weight,gt_label,pred_label,confidence";
  for (int k = 0; k < map.class_count; ++k) out << ",prob_" << k;
  out << "\n";
  char buf[64];
  for (const auto& v : map.voxels) {
    out << v.ix << ',' << v.iy << ',' << v.iz;
    std::snprintf(buf, sizeof buf, ",%.9g,%.9g", v.sdf, v.weight);
    out << buf << ',' << v.gt_label << ',' << v.pred_label();
    std::snprintf(buf, sizeof buf, ",%.9g", v.confidence());
    out << buf;
    for (const float p : v.probs) {
      std::snprintf(buf, sizeof buf, ",%.9g", p);
      out << buf;
    }
    out << "\n";
  }
  if (!out) throw SceneIoError(csv_path, "write failed");
}

VoxelMap load_voxel_map(const fs::path& dir) {
  const fs::path meta_path = dir / "map.json";
  const json meta = read_json(meta_path);
  VoxelMap map;
  try {
    const auto o = meta.at("origin").get<std::vector<double>>();
    map.origin = {o.at(0), o.at(1), o.at(2)};
    map.voxel_size = meta.at("voxel_size").get<double>();
    map.dims = meta.at("dims").get<std::array<int, 3>>();
    map.truncation = meta.at("truncation").get<double>();
    map.class_count = meta.at("class_count").get<int>();
    map.class_names = meta.at("class_names").get<std::vector<std::string>>();
    map.fusion = meta.at("fusion").get<std::string>();
    map.weights = meta.at("weights").get<std::string>();
    map.laplace_alpha = meta.at("laplace_alpha").get<double>();
    map.calibration = meta.at("calibration").get<std::string>();
  } catch (const json::exception& e) {
    throw SceneIoError(meta_path, std::string("bad map metadata: ") + e.what());
  }

  const fs::path csv_path = dir / "map.csv";
  std::ifstream in(csv_path);
  if (!in) throw SceneIoError(csv_path, "cannot open");
  std::string line;
  std::getline(in, line);
  const auto k = static_cast<std::size_t>(map.class_count);
  const std::size_t columns = 8 + k;
  if (split(line).size() != columns) throw SceneIoError(csv_path, "header has wrong column count");
  std::size_t line_no = 1;
  const auto nx = static_cast<std::uint64_t>(map.dims[0]);
  const auto ny = static_cast<std::uint64_t>(map.dims[1]);
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto cells = split(line);
    if (cells.size() != columns) {
      throw SceneIoError(csv_path, "line " + std::to_string(line_no) + ": expected " +
                                       std::to_string(columns) + " columns, found " +
                                       std::to_string(cells.size()));
    }
    try {
      VoxelMapEntry v;
      v.ix = std::stoi(cells[0]);
      v.iy = std::stoi(cells[1]);
      v.iz = std::stoi(cells[2]);
      v.sdf = parse_float(cells[3]);
      v.weight = parse_float(cells[4]);
      v.gt_label = std::stoi(cells[5]);
      for (std::size_t c = 0; c < k; ++c) v.probs.push_back(parse_float(cells[8 + c]));
      v.index = static_cast<std::uint64_t>(v.ix) +
                nx * (static_cast<std::uint64_t>(v.iy) + ny * static_cast<std::uint64_t>(v.iz));
      map.voxels.push_back(std::move(v));
    } catch (const std::logic_error&) {
      throw SceneIoError(csv_path, "line " + std::to_string(line_no) + ": malformed number");
    }
  }
  return map;
}

void save_scaling_params(const ScalingParams& params, const std::string& target,
                         const fs::path& file, double objective, double identity_objective,
                         const std::string& metric) {
  json j = {{"mode", std::string(to_string(params.mode))},
            {"tau", params.tau},
            {"target", target},
            {"metric", metric},
            {"objective", objective},
            {"identity_objective", identity_objective}};
  write_json(j, file);
}

ScalingParams load_scaling_params(const fs::path& file) {
  const json j = read_json(file);
  try {
    ScalingParams p;
    p.mode = parse_scaling_mode(j.at("mode").get<std::string>());
    p.tau = j.at("tau").get<std::vector<double>>();
    if (p.mode == ScalingMode::kTemperature && p.tau.size() != 1) {
      throw std::invalid_argument("temperature mode needs exactly one tau");
    }
    for (const double t : p.tau) {
      if (!(t > 0.0) || !std::isfinite(t)) throw std::invalid_argument("tau must be finite and > 0");
    }
    return p;
  } catch (const std::exception& e) {
    throw SceneIoError(file, std::string("bad scaling parameters: ") + e.what());
  }
}

void save_glfs_params(const GlfsParams& p, const fs::path& file,
                      const std::vector<double>& loss_history, int best_epoch) {
  std::vector<double> tau, table;
  for (std::size_t k = 0; k < p.log_tau.size(); ++k) tau.push_back(std::exp(p.log_tau[k]));
  for (std::size_t i = 0; i < p.table_raw.size(); ++i) table.push_back(p.table_weight(i));
  json j = {{"class_count", p.class_count},
            {"scalar_tau", p.scalar_tau},
            {"tau", tau},
            {"gate", p.gate()},
            {"epsilon", p.epsilon()},
            {"table", table},
            {"table_shape",
             {p.class_count, p.bins.distance_bins(), p.bins.incidence_bins()}},
            {"distance_edges", p.bins.distance_edges},
            {"incidence_edges", p.bins.incidence_edges},
            {"raw",
             {{"log_tau", p.log_tau},
              {"gate_logit", p.gate_logit},
              {"epsilon_logit", p.epsilon_logit},
              {"table", p.table_raw}}},
            {"best_epoch", best_epoch},
            {"loss_history", loss_history}};
  // JSON has no infinities; exact 0/1 gates are written as null raw logits.
  if (!std::isfinite(p.gate_logit)) j["raw"]["gate_logit"] = nullptr;
  if (!std::isfinite(p.epsilon_logit)) j["raw"]["epsilon_logit"] = nullptr;
  write_json(j, file);
}

GlfsParams load_glfs_params(const fs::path& file) {
  const json j = read_json(file);
  try {
    GlfsParams p;
    p.class_count = j.at("class_count").get<int>();
    p.scalar_tau = j.at("scalar_tau").get<bool>();
    p.bins.distance_edges = j.at("distance_edges").get<std::vector<double>>();
    p.bins.incidence_edges = j.at("incidence_edges").get<std::vector<double>>();
    const auto& raw = j.at("raw");
    p.log_tau = raw.at("log_tau").get<std::vector<double>>();
    p.table_raw = raw.at("table").get<std::vector<double>>();
    auto gate_logit = [&](const char* raw_key, const char* value_key) {
      if (!raw.at(raw_key).is_null()) return raw.at(raw_key).get<double>();
      const double v = j.at(value_key).get<double>();
      if (v >= 1.0) return std::numeric_limits<double>::infinity();
      if (v <= 0.0) return -std::numeric_limits<double>::infinity();
      return std::log(v / (1.0 - v));
    };
    p.gate_logit = gate_logit("gate_logit", "gate");
    p.epsilon_logit = gate_logit("epsilon_logit", "epsilon");
    p.validate();
    return p;
  } catch (const std::exception& e) {
    throw SceneIoError(file, std::string("bad GLFS parameters: ") + e.what());
  }
}

void save_metrics_json(const MetricsReport& r, const fs::path& file) {
  json j = summary_json(r.voxel);
  j.erase("count");
  j["voxel_count"] = r.voxel.count;
  j["fusion"] = r.fusion;
  j["calibration"] = r.calibration;
  j["bins"] = r.bins;
  j["voxel"] = summary_json(r.voxel);
  if (r.pixel) {
    j["pixel"] = summary_json(*r.pixel);
    j["pixel_count"] = r.pixel->count;
  }
  write_json(j, file);
}

MetricsReport load_metrics_json(const fs::path& file) {
  const json j = read_json(file);
  try {
    MetricsReport r;
    r.fusion = j.at("fusion").get<std::string>();
    r.calibration = j.at("calibration").get<std::string>();
    r.bins = j.at("bins").get<int>();
    r.voxel = summary_from(j.at("voxel"));
    if (j.contains("pixel")) r.pixel = summary_from(j.at("pixel"));
    return r;
  } catch (const json::exception& e) {
    throw SceneIoError(file, std::string("bad metrics file: ") + e.what());
  }
}

void save_reliability_csv(const std::vector<ReliabilityTable>& tables, const fs::path& file) {
  auto out = open_out(file);
  out << "conditioning,bin,cond_class,mean_conf,mean_acc,count\n";
  char buf[160];
  for (const auto& t : tables) {
    const std::string cond(to_string(t.conditioning));
    for (const auto& row : t.rows) {
      std::snprintf(buf, sizeof buf, "%s,%d,%d,%.17g,%.17g,%zu\n", cond.c_str(), row.bin,
                    row.cond_class, row.mean_conf(), row.mean_acc(), row.count);
      out << buf;
    }
  }
  if (!out) throw SceneIoError(file, "write failed");
}

void save_report_csv(const std::vector<std::pair<std::string, MetricsReport>>& rows,
                     const fs::path& file) {
  auto out = open_out(file);
  out << "run,fusion,calibration,voxel_count,mece,tl_ece,ece,brier,nll,miou,pixel_mece\n";
  char buf[256];
  for (const auto& [name, r] : rows) {
    const auto& v = r.voxel;
    std::snprintf(buf, sizeof buf, ",%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,", v.count, v.mece,
                  v.tl_ece, v.ece, v.brier, v.nll, v.miou);
    out << name << ',' << r.fusion << ',' << r.calibration << buf;
    if (r.pixel) {
      std::snprintf(buf, sizeof buf, "%.17g", r.pixel->mece);
      out << buf;
    }
    out << "\n";
  }
  if (!out) throw SceneIoError(file, "write failed");
}

void save_planar_csv(const PlanarMap& map, const fs::path& file) {
  auto out = open_out(file);
  out << "x,y,class,confidence\n";
  char buf[128];
  for (int r = 0; r < map.rows(); ++r) {
    for (int c = 0; c < map.cols(); ++c) {
      const Eigen::Vector2d p = map.cell_center(r, c);
      for (int k = 0; k < map.class_count(); ++k) {
        if (map.count(r, c, k) == 0) continue;
        std::snprintf(buf, sizeof buf, "%.6f,%.6f,%d,%.9g\n", p.x(), p.y(), k,
                      map.confidence(r, c, k));
        out << buf;
      }
    }
  }
  if (!out) throw SceneIoError(file, "write failed");
}

void save_planar_pgm(const PlanarMap& map, const fs::path& file) {
  auto out = open_out(file);
  out << "P2\n" << map.cols() << ' ' << map.rows() << "\n255\n";
  // Image rows run top-down, i.e. from high y to low y.
  for (int r = map.rows() - 1; r >= 0; --r) {
    for (int c = 0; c < map.cols(); ++c) {
      const int label = map.top_label(r, c);
      const int grey = label < 0 ? 0 : 255 * (label + 1) / map.class_count();
      out << grey << (c + 1 == map.cols() ? '\n' : ' ');
    }
  }
  if (!out) throw SceneIoError(file, "write failed");
}

}  // namespace semfuse
