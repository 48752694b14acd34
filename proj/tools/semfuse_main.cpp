// semfuse command-line driver.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "semfuse/frames.hpp"
#include "semfuse/glfs.hpp"
#include "semfuse/map_io.hpp"
#include "semfuse/pipeline.hpp"
#include "semfuse/planar.hpp"
#include "semfuse/scaling.hpp"
#include "semfuse/simulator.hpp"

namespace fs = std::filesystem;
using namespace semfuse;

namespace {

std::string one_line(std::string s) {
  for (auto& c : s) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  return s;
}

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void write_resolved_config(const CLI::App& app, const fs::path& file) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::trunc);
  if (!out) throw SceneIoError(file, "cannot open for writing");
  out << app.config_to_str(true, false);
}

// Resolved config goes inside output directories and next to output files.
fs::path config_path_for_dir(const fs::path& dir) { return dir / "resolved_config.ini"; }
fs::path config_path_for_file(const fs::path& file) {
  fs::path p = file;
  p += ".config.ini";
  return p;
}

std::vector<Scene> load_scenes(const std::vector<std::string>& dirs) {
  std::vector<Scene> scenes;
  for (const auto& d : dirs) scenes.push_back(load_scene(d));
  return scenes;
}

std::vector<ObservationCache> load_caches(const std::vector<std::string>& files) {
  std::vector<ObservationCache> caches;
  for (const auto& f : files) {
    if (!fs::exists(f)) {
      throw SceneIoError(f, "observation cache missing; re-run fuse with --cache <file>");
    }
    caches.push_back(ObservationCache::load(f));
  }
  return caches;
}

// ---- option bundles ----------------------------------------------------------

struct FusionFlags {
  std::string fusion = "rbu";
  std::string weights = "const";
  double laplace_alpha = 1e-3;

  void add(CLI::App* sub, bool with_glfs) {
    std::vector<std::string> names{"rbu", "hist", "avg", "geomean"};
    if (with_glfs) names.push_back("glfs");
    sub->add_option("--fusion", fusion, "Fusion strategy")
        ->check(CLI::IsMember(names))
        ->capture_default_str();
    sub->add_option("--weights", weights, "Observation weighting")
        ->check(CLI::IsMember({"const", "normal-dist", "quad-dist"}))
        ->capture_default_str();
    sub->add_option("--laplace-alpha", laplace_alpha, "Laplace smoothing mass (> 0)")
        ->capture_default_str();
  }
  FusionConfig config() const {
    FusionConfig c;
    c.strategy = parse_fusion_strategy(fusion);
    c.laplace_alpha = laplace_alpha;
    return c;
  }
  WeightScheme scheme() const {
    WeightScheme w;
    w.kind = parse_weight_kind(weights);
    return w;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"semfuse: semantic TSDF fusion, calibration metrics and post-hoc calibration"};
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.set_config("--config", "", "Config file with one [section] per subcommand");
  app.require_subcommand(1);

  // simulate
  auto* sim = app.add_subcommand("simulate", "Render a synthetic labelled scene");
  std::string sim_spec, sim_out;
  std::optional<std::uint64_t> sim_seed;
  sim->add_option("--spec", sim_spec, "JSON spec with scene and segmenter sections (default: standard fixture)");
  sim->add_option("--out", sim_out, "Output scene directory")->required();
  sim->add_option("--seed", sim_seed, "Override the scene seed");

  // fuse
  auto* fuse = app.add_subcommand("fuse", "Integrate a scene into a semantic voxel map");
  std::string fuse_scene, fuse_out, fuse_scaling, fuse_glfs, fuse_cache;
  double fuse_trunc = 0.0;
  FusionFlags fuse_flags;
  fuse->add_option("--scene", fuse_scene, "Scene directory")->required();
  fuse->add_option("--out", fuse_out, "Output map directory")->required();
  fuse_flags.add(fuse, true);
  fuse->add_option("--scaling", fuse_scaling, "Scaling parameters JSON applied to the logits");
  fuse->add_option("--glfs-params", fuse_glfs, "GLFS parameters JSON (required for --fusion glfs)");
  fuse->add_option("--cache", fuse_cache, "Write the observation cache to this file");
  fuse->add_option("--truncation", fuse_trunc, "TSDF truncation in metres (<= 0: 4 voxels)")
      ->capture_default_str();

  // calibrate-2d
  auto* cal2 = app.add_subcommand("calibrate-2d", "Fit pixel-level temperature/vector scaling");
  std::vector<std::string> cal2_scenes;
  std::string cal2_out, cal2_mode = "temp", cal2_metric = "mece";
  int cal2_bins = 15, cal2_stride = 8;
  std::uint64_t cal2_seed = 0;
  cal2->add_option("--scene", cal2_scenes, "Scene directories")->required();
  cal2->add_option("--out", cal2_out, "Output parameters JSON")->required();
  cal2->add_option("--mode", cal2_mode, "Scaling mode")
      ->check(CLI::IsMember({"temp", "vector"}))
      ->capture_default_str();
  cal2->add_option("--metric", cal2_metric, "Calibration objective")
      ->check(CLI::IsMember({"mece", "ece", "tl-ece"}))
      ->capture_default_str();
  cal2->add_option("--bins", cal2_bins, "Confidence bins")->capture_default_str();
  cal2->add_option("--stride", cal2_stride, "Pixel subsampling stride per axis")->capture_default_str();
  cal2->add_option("--seed", cal2_seed, "Search seed")->capture_default_str();

  // calibrate-3d
  auto* cal3 = app.add_subcommand("calibrate-3d", "Fit voxel-level temperature/vector scaling");
  std::vector<std::string> cal3_caches;
  std::string cal3_out, cal3_mode = "temp", cal3_metric = "mece";
  int cal3_bins = 15;
  std::uint64_t cal3_seed = 0;
  FusionFlags cal3_flags;
  cal3->add_option("--cache", cal3_caches, "Observation cache files")->required();
  cal3->add_option("--out", cal3_out, "Output parameters JSON")->required();
  cal3->add_option("--mode", cal3_mode, "Scaling mode")
      ->check(CLI::IsMember({"temp", "vector"}))
      ->capture_default_str();
  cal3->add_option("--metric", cal3_metric, "Calibration objective")
      ->check(CLI::IsMember({"mece", "ece", "tl-ece"}))
      ->capture_default_str();
  cal3->add_option("--bins", cal3_bins, "Confidence bins")->capture_default_str();
  cal3->add_option("--seed", cal3_seed, "Search seed")->capture_default_str();
  cal3_flags.add(cal3, false);

  // train-glfs
  auto* train = app.add_subcommand("train-glfs", "Train the generalized learned fusion strategy");
  std::vector<std::string> train_caches;
  std::string train_out;
  double train_gate = 1.0, train_eps = 1.0;
  TrainerConfig tc;
  bool train_scalar_tau = false;
  train->add_option("--cache", train_caches, "Observation cache files")->required();
  train->add_option("--out", train_out, "Output GLFS parameters JSON")->required();
  train->add_option("--gate", train_gate,
                    "Initial gate G; 1/1 is the RBU limit. Exact 0 or 1 stays fixed")
      ->capture_default_str();
  train->add_option("--epsilon", train_eps, "Initial gate epsilon; exact 0 or 1 stays fixed")
      ->capture_default_str();
  train->add_flag("--scalar-tau", train_scalar_tau, "Learn one shared temperature");
  train->add_option("--eta", tc.eta, "Weight of the calibration term")->capture_default_str();
  train->add_option("--bins", tc.bins, "Soft bins")->capture_default_str();
  train->add_option("--sharpness", tc.sharpness, "Soft-bin width")->capture_default_str();
  train->add_option("--lr", tc.learning_rate, "Learning rate")->capture_default_str();
  train->add_option("--epochs", tc.epochs, "Epochs")->capture_default_str();
  train->add_option("--batch", tc.batch_size, "Minibatch size")->capture_default_str();
  train->add_option("--seed", tc.seed, "Shuffle/subsample seed")->capture_default_str();
  train->add_option("--max-entries", tc.max_entries, "Cache entries kept for training")
      ->capture_default_str();
  train->add_option("--laplace-alpha", tc.laplace_alpha, "Laplace smoothing mass")
      ->capture_default_str();

  // evaluate
  auto* eval = app.add_subcommand("evaluate", "Compute voxel (and pixel) metrics");
  std::string eval_map, eval_scene, eval_scaling, eval_out;
  EvaluateOptions eopt;
  eval->add_option("--map", eval_map, "Map directory written by fuse")->required();
  eval->add_option("--scene", eval_scene, "Scene directory for pixel metrics");
  eval->add_option("--scaling", eval_scaling, "Scaling parameters applied to pixel logits");
  eval->add_option("--out", eval_out, "Output directory")->required();
  eval->add_option("--bins", eopt.bins, "Confidence bins")->capture_default_str();
  eval->add_option("--stride", eopt.pixel_stride, "Pixel subsampling stride")->capture_default_str();

  // project-map
  auto* proj = app.add_subcommand("project-map", "Project a voxel map to a top-down semantic map");
  std::string proj_map, proj_out;
  PlanarConfig pcfg;
  int proj_goal = -1;
  double proj_threshold = 0.5;
  proj->add_option("--map", proj_map, "Map directory")->required();
  proj->add_option("--out", proj_out, "Output directory")->required();
  proj->add_option("--cell-size", pcfg.cell_size, "Cell size in metres")->capture_default_str();
  proj->add_option("--z-min", pcfg.z_min, "Lowest contributing voxel height")->capture_default_str();
  proj->add_option("--z-max", pcfg.z_max, "Highest contributing voxel height")->capture_default_str();
  proj->add_option("--goal-class", proj_goal, "Also write the filtered goal mask of this class");
  proj->add_option("--threshold", proj_threshold, "Goal confidence threshold")->capture_default_str();

  // report
  auto* report = app.add_subcommand("report", "Merge metrics files into one comparison table");
  std::vector<std::string> report_inputs;
  std::string report_out;
  report->add_option("--metrics", report_inputs, "metrics.json files, optionally name=path")
      ->required();
  report->add_option("--out", report_out, "Output CSV")->required();

  try {
    try {
      app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
      return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
      return app.exit(e);
    } catch (const CLI::ParseError& e) {
      throw UsageError(e.what());
    }

    if (*sim) {
      SimulationSpec spec{standard_fixture(), standard_segmenter()};
      if (!sim_spec.empty()) spec = load_simulation_spec(sim_spec);
      if (sim_seed) spec.scene.seed = *sim_seed;
      generate_scene(spec.scene, spec.segmenter, sim_out);
      std::ofstream(fs::path(sim_out) / "simulation.json") << simulation_spec_to_json(spec);
      write_resolved_config(app, config_path_for_dir(sim_out));
      std::printf("wrote %d frames to %s\n", spec.scene.trajectory.frames, sim_out.c_str());
    } else if (*fuse) {
      const Scene scene = load_scene(fuse_scene);
      FuseOptions opt;
      opt.fusion = fuse_flags.config();
      opt.weights = fuse_flags.scheme();
      opt.truncation = fuse_trunc;
      opt.build_cache = !fuse_cache.empty();
      if (!fuse_scaling.empty()) {
        opt.scaling = load_scaling_params(fuse_scaling);
        opt.calibration = fs::path(fuse_scaling).stem().string();
      }
      if (!fuse_glfs.empty()) opt.glfs = load_glfs_params(fuse_glfs);
      if (opt.fusion.strategy == FusionStrategy::kGlfs && !opt.glfs) {
        throw std::invalid_argument("--fusion glfs requires --glfs-params <file>");
      }
      const FuseResult r = run_fuse(scene, opt);
      save_voxel_map(r.map, fuse_out);
      if (opt.build_cache) r.cache.save(fuse_cache);
      write_resolved_config(app, config_path_for_dir(fuse_out));
      std::printf("fused %zu surface voxels (%zu cached)\n", r.map.voxels.size(),
                  r.cache.voxel_count());
    } else if (*cal2) {
      const auto scenes = load_scenes(cal2_scenes);
      CalibrationObjective obj;
      obj.metric = parse_calibration_metric(cal2_metric);
      obj.bins = cal2_bins;
      obj.pixel_stride = cal2_stride;
      SearchOptions so;
      so.seed = cal2_seed;
      const auto res = calibrate_2d(scenes, obj, parse_scaling_mode(cal2_mode), so);
      save_scaling_params(res.params, "2d", cal2_out, res.objective, res.identity_objective,
                          cal2_metric);
      write_resolved_config(app, config_path_for_file(cal2_out));
      std::printf("objective %.6f (identity %.6f), tau[0] = %.6f\n", res.objective,
                  res.identity_objective, res.params.tau[0]);
    } else if (*cal3) {
      const auto caches = load_caches(cal3_caches);
      CalibrationObjective obj;
      obj.metric = parse_calibration_metric(cal3_metric);
      obj.bins = cal3_bins;
      obj.fusion = cal3_flags.config();
      obj.weights = cal3_flags.scheme();
      SearchOptions so;
      so.seed = cal3_seed;
      const auto res = calibrate_3d(caches, obj, parse_scaling_mode(cal3_mode), so);
      save_scaling_params(res.params, "3d", cal3_out, res.objective, res.identity_objective,
                          cal3_metric);
      write_resolved_config(app, config_path_for_file(cal3_out));
      std::printf("objective %.6f (identity %.6f), tau[0] = %.6f\n", res.objective,
                  res.identity_objective, res.params.tau[0]);
    } else if (*train) {
      const auto caches = load_caches(train_caches);
      ObservationCache all(caches.front().class_count());
      for (const auto& c : caches) all.append(c);
      if (!(train_gate >= 0.0 && train_gate <= 1.0 && train_eps >= 0.0 && train_eps <= 1.0)) {
        throw std::invalid_argument("--gate and --epsilon must lie in [0, 1]");
      }
      const auto init =
          GlfsParams::make(all.class_count(), train_gate, train_eps, LookupBins::defaults(), train_scalar_tau);
      const auto res = train_glfs(all, init, tc);
      save_glfs_params(res.params, train_out, res.loss_history, res.best_epoch);
      write_resolved_config(app, config_path_for_file(train_out));
      std::printf("loss %.6f -> %.6f (best epoch %d)\n", res.loss_history.front(),
                  res.loss_history[static_cast<std::size_t>(res.best_epoch)], res.best_epoch);
    } else if (*eval) {
      const VoxelMap map = load_voxel_map(eval_map);
      std::optional<Scene> scene;
      if (!eval_scene.empty()) scene = load_scene(eval_scene);
      if (!eval_scaling.empty()) eopt.pixel_scaling = load_scaling_params(eval_scaling);
      const Evaluation ev = evaluate(map, scene ? &*scene : nullptr, eopt);
      const fs::path out(eval_out);
      save_metrics_json(ev.report, out / "metrics.json");
      save_reliability_csv(ev.voxel_tables, out / "reliability_voxel.csv");
      if (scene) save_reliability_csv(ev.pixel_tables, out / "reliability_pixel.csv");
      write_resolved_config(app, config_path_for_dir(out));
      std::printf("voxel mECE %.6f over %zu voxels\n", ev.report.voxel.mece, ev.report.voxel.count);
    } else if (*proj) {
      const VoxelMap map = load_voxel_map(proj_map);
      const auto voxels = map.planar_voxels();
      const PlanarMap planar = project_to_planar_map(voxels, map.class_count, pcfg);
      const fs::path out(proj_out);
      save_planar_csv(planar, out / "planar.csv");
      save_planar_pgm(planar, out / "planar.pgm");
      if (proj_goal >= 0) {
        if (proj_goal >= map.class_count) throw std::invalid_argument("--goal-class out of range");
        const Mask2D goal = largest_connected_component(threshold(planar, proj_goal, proj_threshold));
        std::ofstream pgm(out / "goal.pgm");
        pgm << "P2\n" << goal.cols << ' ' << goal.rows << "\n1\n";
        for (int r = goal.rows - 1; r >= 0; --r) {
          for (int c = 0; c < goal.cols; ++c) pgm << (goal.at(r, c) ? 1 : 0) << (c + 1 == goal.cols ? '\n' : ' ');
        }
      }
      write_resolved_config(app, config_path_for_dir(out));
      std::printf("%zu populated cells\n", planar.populated_cells());
    } else if (*report) {
      std::vector<std::pair<std::string, MetricsReport>> rows;
      for (const auto& in : report_inputs) {
        const auto eq = in.find('=');
        const std::string path = eq == std::string::npos ? in : in.substr(eq + 1);
        const std::string name =
            eq == std::string::npos ? fs::path(in).parent_path().filename().string() : in.substr(0, eq);
        rows.emplace_back(name, load_metrics_json(path));
      }
      save_report_csv(rows, report_out);
      write_resolved_config(app, config_path_for_file(report_out));
      std::printf("%zu rows\n", rows.size());
    }
    return 0;
  } catch (const UsageError& e) {
    std::fprintf(stderr, "error[usage]: %s\n", one_line(e.what()).c_str());
    return 2;
  } catch (const SceneIoError& e) {
    std::fprintf(stderr, "error[io]: %s\n", one_line(e.what()).c_str());
    return 1;
  } catch (const fs::filesystem_error& e) {
    std::fprintf(stderr, "error[io]: %s\n", one_line(e.what()).c_str());
    return 1;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error[invalid]: %s\n", one_line(e.what()).c_str());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error[runtime]: %s\n", one_line(e.what()).c_str());
    return 1;
  }
}
