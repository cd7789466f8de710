#include "poseflow/bench.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>
#include <thread>

#include "poseflow/objective.hpp"
#include "poseflow/rng.hpp"

namespace poseflow {

namespace {

constexpr ShapeKind kShapeCycle[3] = {ShapeKind::Cube, ShapeKind::Icosphere, ShapeKind::Cylinder};

double median(std::vector<double> v) {
  if (v.empty()) return 0;
  std::sort(v.begin(), v.end());
  size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::uint64_t scene_seed(std::uint64_t suite_seed, int index) {
  return suite_seed * 0x9e3779b97f4a7c15ull + static_cast<std::uint64_t>(index) + 1;
}

struct SceneCase {
  SyntheticScene scene;
  std::vector<Eigen::Vector3d> add_points;
  Eigen::Vector3d noise_axis, noise_dir;
};

SceneCase make_case(const BenchOptions& opts, int index, double occlusion) {
  GenParams params;
  params.shape = kShapeCycle[index % 3];
  params.noise = opts.sensor;
  params.occluder_fraction = occlusion;
  SceneCase c;
  c.scene = gen_scene(params, scene_seed(opts.seed, index));
  c.add_points = farthest_point_sample(c.scene.mesh.vertices, 1024, 0);
  CounterRng dir_rng(scene_seed(opts.seed, index), "noise-dir");
  c.noise_axis = dir_rng.unit_vector();
  c.noise_dir = dir_rng.unit_vector();
  return c;
}

void append_csv_double(std::ostringstream& os, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  os << buf;
}

}  // namespace

int effective_threads(int requested) {
  int n = requested > 0 ? requested : static_cast<int>(std::thread::hardware_concurrency());
  if (n < 1) n = 1;
  if (const char* cap = std::getenv("POSE_REFINE_THREADS")) {
    int c = std::atoi(cap);
    if (c >= 1) n = std::min(n, c);
  }
  return n;
}

void parallel_for(int n, int threads, const std::function<void(int)>& fn) {
  threads = std::max(1, std::min(threads, n));
  if (threads == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (int t = 0; t < threads; ++t)
    pool.emplace_back([&, t]() {
      for (int i = t; i < n; i += threads) fn(i);
    });
  for (auto& th : pool) th.join();
}

PoseError pose_error(const Pose& est, const Pose& gt, const TriMesh& mesh) {
  PoseError e;
  e.rot_deg = rotation_angle_deg(est.R, gt.R);
  e.trans_mm = (est.t - gt.t).norm();
  e.add_mm = pose_loss(est, gt, farthest_point_sample(mesh.vertices, 1024, 0), PointDistance::L2);
  e.diameter_mm = mesh.diameter;
  return e;
}

Pose baseline_single_shot(const GrayImage& rgb, const DepthMap& depth, const TriMesh& mesh,
                          const Intrinsics& k, const Pose& p_init, const RefineConfig& cfg) {
  Intrinsics kc = crop_camera(mesh, p_init, k, cfg.crop_size, cfg.crop_pad);
  GrayImage rgb_c;
  DepthMap depth_c;
  resample_view(rgb, depth, k, kc, rgb_c, depth_c);

  // same imaging path for both frames, matching the recurrent refiner
  RenderOutput ref_full = render(mesh, p_init, k);
  RenderOutput ref;
  resample_view(ref_full.intensity, ref_full.depth, k, kc, ref.intensity, ref.depth);
  FeatureMap f1 = extract_features(ref.intensity, ref.depth, kc);
  FeatureMap f2 = extract_features(rgb_c, depth_c, kc);
  CorrelationPyramid pyr = build_volume(f1, f2, cfg.pyramid_levels);

  FlowField zero(kc.height / kFeatureStride, kc.width / kFeatureStride);
  LookupWindow win = lookup(pyr, zero, cfg.lookup_radius);
  MatchResult match = match_correspondences(win, cfg);

  // matched grid flow re-anchored at the grid-center pixels of the crop
  FlowField flow_full(kc.height, kc.width);
  const int half = kFeatureStride / 2;
  for (int i = 0; i < match.flow.rows; ++i) {
    for (int j = 0; j < match.flow.cols; ++j) {
      if (!match.flow.valid.at(i, j)) continue;
      int r = i * kFeatureStride + half;
      int c = j * kFeatureStride + half;
      size_t src = match.flow.idx(i, j);
      size_t dst = flow_full.idx(r, c);
      // endpoint = anchor + match; re-expressed against the pixel center
      flow_full.du[dst] = match.flow.du[src] - 0.5;
      flow_full.dv[dst] = match.flow.dv[src] - 0.5;
      flow_full.valid.at(r, c) = 1;
    }
  }
  Pose residual = ransac_kabsch_baseline(flow_full, ref.depth, depth_c, kc, cfg);
  return apply_residual(residual, p_init);
}

std::vector<NoiseSweepRow> run_noise_sweep_data(const BenchOptions& opts) {
  const std::vector<double> levels = {3, 5, 10, 20, 30, 40, 50};
  const int n = opts.scenes;
  std::vector<SceneCase> cases(n);
  parallel_for(n, effective_threads(opts.threads),
               [&](int i) { cases[i] = make_case(opts, i, 0.0); });

  std::vector<NoiseSweepRow> rows;
  for (double level : levels) {
    std::vector<PoseError> init_err(n), ref_err(n);
    parallel_for(n, effective_threads(opts.threads), [&](int i) {
      const auto& c = cases[i];
      Pose p_init = perturb_pose_level(c.scene.gt, level, c.noise_axis, c.noise_dir);
      init_err[i] = pose_error(p_init, c.scene.gt, c.scene.mesh);
      Pose refined = p_init;
      try {
        RefineConfig cfg = opts.refine;
        cfg.seed = scene_seed(opts.seed, i);
        refined = refine(c.scene.rgb, c.scene.depth, c.scene.mesh, c.scene.camera, p_init, cfg)
                      .final_pose();
      } catch (const Error&) {
        // refinement unavailable: fall back to the initialization
      }
      ref_err[i] = pose_error(refined, c.scene.gt, c.scene.mesh);
    });

    NoiseSweepRow row;
    row.level = level;
    row.scenes = n;
    int init_hit = 0, ref_hit = 0;
    std::vector<double> ir, rr, it, rt, ia, ra;
    for (int i = 0; i < n; ++i) {
      init_hit += init_err[i].add_mm < 0.1 * init_err[i].diameter_mm;
      ref_hit += ref_err[i].add_mm < 0.1 * ref_err[i].diameter_mm;
      ir.push_back(init_err[i].rot_deg);
      rr.push_back(ref_err[i].rot_deg);
      it.push_back(init_err[i].trans_mm);
      rt.push_back(ref_err[i].trans_mm);
      ia.push_back(init_err[i].add_mm);
      ra.push_back(ref_err[i].add_mm);
    }
    row.init_recall = static_cast<double>(init_hit) / n;
    row.refined_recall = static_cast<double>(ref_hit) / n;
    row.init_rot_med_deg = median(ir);
    row.refined_rot_med_deg = median(rr);
    row.init_t_med_mm = median(it);
    row.refined_t_med_mm = median(rt);
    row.init_add_med_mm = median(ia);
    row.refined_add_med_mm = median(ra);
    rows.push_back(row);
  }
  return rows;
}

std::string run_noise_sweep(const BenchOptions& opts) {
  std::ostringstream os;
  os << "level,scenes,init_recall,refined_recall,init_rot_med_deg,refined_rot_med_deg,"
        "init_t_med_mm,refined_t_med_mm,init_add_med_mm,refined_add_med_mm\n";
  for (const NoiseSweepRow& row : run_noise_sweep_data(opts)) {
    os << row.level << "," << row.scenes << ",";
    append_csv_double(os, row.init_recall);
    os << ",";
    append_csv_double(os, row.refined_recall);
    for (double v : {row.init_rot_med_deg, row.refined_rot_med_deg, row.init_t_med_mm,
                     row.refined_t_med_mm, row.init_add_med_mm, row.refined_add_med_mm}) {
      os << ",";
      append_csv_double(os, v);
    }
    os << "\n";
  }
  return os.str();
}

std::string run_iteration_sweep(const BenchOptions& opts) {
  const int n = opts.scenes;
  const int max_iters = 10;
  std::vector<SceneCase> cases(n);
  parallel_for(n, effective_threads(opts.threads),
               [&](int i) { cases[i] = make_case(opts, i, 0.0); });

  // per scene, errors at every iteration count from a single N=10 trace
  std::vector<std::vector<PoseError>> err(n);
  parallel_for(n, effective_threads(opts.threads), [&](int i) {
    const auto& c = cases[i];
    Pose p_init = perturb_pose_level(c.scene.gt, 30.0, c.noise_axis, c.noise_dir);
    RefineConfig cfg = opts.refine;
    cfg.iterations = max_iters;
    cfg.seed = scene_seed(opts.seed, i);
    err[i].resize(max_iters + 1);
    try {
      RefineTrace trace =
          refine(c.scene.rgb, c.scene.depth, c.scene.mesh, c.scene.camera, p_init, cfg);
      for (int k = 0; k <= max_iters; ++k)
        err[i][k] = pose_error(trace.steps[k].pose, c.scene.gt, c.scene.mesh);
    } catch (const Error&) {
      for (int k = 0; k <= max_iters; ++k)
        err[i][k] = pose_error(p_init, c.scene.gt, c.scene.mesh);
    }
  });

  std::ostringstream os;
  os << "iterations,scenes,add_med_mm,rot_med_deg,t_med_mm\n";
  for (int k = 0; k <= max_iters; ++k) {
    std::vector<double> add, rot, t;
    for (int i = 0; i < n; ++i) {
      add.push_back(err[i][k].add_mm);
      rot.push_back(err[i][k].rot_deg);
      t.push_back(err[i][k].trans_mm);
    }
    os << k << "," << n << ",";
    append_csv_double(os, median(add));
    os << ",";
    append_csv_double(os, median(rot));
    os << ",";
    append_csv_double(os, median(t));
    os << "\n";
  }
  return os.str();
}

std::string run_baseline_compare(const BenchOptions& opts) {
  const int n = opts.scenes;
  std::vector<SceneCase> cases(n);
  parallel_for(n, effective_threads(opts.threads),
               [&](int i) { cases[i] = make_case(opts, i, opts.occlusion); });

  std::vector<PoseError> ref_err(n), base_err(n);
  std::vector<int> base_ok(n, 1);
  parallel_for(n, effective_threads(opts.threads), [&](int i) {
    const auto& c = cases[i];
    Pose p_init = perturb_pose_level(c.scene.gt, 15.0, c.noise_axis, c.noise_dir);
    RefineConfig cfg = opts.refine;
    cfg.seed = scene_seed(opts.seed, i);
    Pose refined = p_init;
    try {
      refined =
          refine(c.scene.rgb, c.scene.depth, c.scene.mesh, c.scene.camera, p_init, cfg).final_pose();
    } catch (const Error&) {
    }
    ref_err[i] = pose_error(refined, c.scene.gt, c.scene.mesh);
    Pose base = p_init;
    try {
      base = baseline_single_shot(c.scene.rgb, c.scene.depth, c.scene.mesh, c.scene.camera, p_init,
                                  cfg);
    } catch (const Error&) {
      base_ok[i] = 0;
    }
    base_err[i] = pose_error(base, c.scene.gt, c.scene.mesh);
  });

  std::ostringstream os;
  os << "scene,refined_rot_deg,baseline_rot_deg,refined_t_mm,baseline_t_mm,baseline_ok\n";
  std::vector<double> rr, br, rt, bt;
  for (int i = 0; i < n; ++i) {
    os << i << ",";
    append_csv_double(os, ref_err[i].rot_deg);
    os << ",";
    append_csv_double(os, base_err[i].rot_deg);
    os << ",";
    append_csv_double(os, ref_err[i].trans_mm);
    os << ",";
    append_csv_double(os, base_err[i].trans_mm);
    os << "," << base_ok[i] << "\n";
    rr.push_back(ref_err[i].rot_deg);
    br.push_back(base_err[i].rot_deg);
    rt.push_back(ref_err[i].trans_mm);
    bt.push_back(base_err[i].trans_mm);
  }
  os << "median,";
  append_csv_double(os, median(rr));
  os << ",";
  append_csv_double(os, median(br));
  os << ",";
  append_csv_double(os, median(rt));
  os << ",";
  append_csv_double(os, median(bt));
  os << ",1\n";
  return os.str();
}

std::string run_suite(const std::string& name, const BenchOptions& opts) {
  if (name == "noise-sweep") return run_noise_sweep(opts);
  if (name == "iteration-sweep") return run_iteration_sweep(opts);
  if (name == "baseline-compare") return run_baseline_compare(opts);
  throw Error(ErrorCode::ParseError, "unknown bench suite '" + name + "'");
}

// ---------------------------------------------------------------------------
// config file
// ---------------------------------------------------------------------------

namespace {

std::vector<double> parse_numbers(const std::string& s) {
  std::istringstream is(s);
  std::vector<double> out;
  double v;
  while (is >> v) out.push_back(v);
  return out;
}

}  // namespace

AppConfig parse_config_text(const std::string& text, const std::string& origin) {
  AppConfig cfg;
  std::istringstream in(text);
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    auto eq = line.find('=');
    if (eq == std::string::npos) {
      bool blank = line.find_first_not_of(" \t\r") == std::string::npos;
      if (!blank)
        throw Error(ErrorCode::ParseError,
                    origin + ":" + std::to_string(lineno) + ": expected key = value");
      continue;
    }
    auto trim = [](std::string s) {
      size_t a = s.find_first_not_of(" \t\r");
      size_t b = s.find_last_not_of(" \t\r");
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    std::string key = trim(line.substr(0, eq));
    std::string val = trim(line.substr(eq + 1));
    auto bad = [&](const std::string& why) -> Error {
      return Error(ErrorCode::ParseError,
                   origin + ":" + std::to_string(lineno) + ": " + why + " for key '" + key + "'");
    };
    try {
      if (key == "iterations") cfg.refine.iterations = std::stoi(val);
      else if (key == "radius") cfg.refine.lookup_radius = std::stoi(val);
      else if (key == "levels") cfg.refine.pyramid_levels = std::stoi(val);
      else if (key == "backend") {
        if (val == "classical") cfg.refine.backend = Backend::Classical;
        else if (val == "neural") cfg.refine.backend = Backend::Neural;
        else throw bad("expected classical|neural");
      } else if (key == "weights") {
        cfg.refine.weights = std::make_shared<NeuralWeights>(load_weights(val));
      } else if (key == "vote") {
        if (val == "irls") cfg.refine.vote = VoteMode::IrlsHuber;
        else if (val == "ransac") cfg.refine.vote = VoteMode::Ransac;
        else throw bad("expected irls|ransac");
      } else if (key == "huber_delta_mm") cfg.refine.huber_delta_mm = std::stod(val);
      else if (key == "irls_iters") cfg.refine.irls_iters = std::stoi(val);
      else if (key == "ransac_iters") cfg.refine.ransac.iters = std::stoi(val);
      else if (key == "ransac_inlier_mm") cfg.refine.ransac.inlier_mm = std::stod(val);
      else if (key == "patch") cfg.refine.patch = std::stoi(val);
      else if (key == "seed") cfg.refine.seed = std::stoull(val);
      else if (key == "softargmax_temp") cfg.refine.softargmax_temp = std::stod(val);
      else if (key == "corr_gate") cfg.refine.corr_gate = std::stod(val);
      else if (key == "crop_size") cfg.refine.crop_size = std::stoi(val);
      else if (key == "crop_pad") cfg.refine.crop_pad = std::stod(val);
      else if (key == "min_valid_pixels") cfg.refine.min_valid_pixels = std::stoi(val);
      else if (key == "noise_mode") {
        if (val == "gaussian") cfg.noise.mode = NoiseSpec::Mode::Gaussian;
        else if (val == "level") cfg.noise.mode = NoiseSpec::Mode::Level;
        else throw bad("expected gaussian|level");
      } else if (key == "noise_level") cfg.noise.level = std::stod(val);
      else if (key == "noise_sigma_rot") {
        auto v = parse_numbers(val);
        if (v.size() != 3) throw bad("expected 3 numbers");
        cfg.noise.sigma_rot_deg = {v[0], v[1], v[2]};
      } else if (key == "noise_sigma_t") {
        auto v = parse_numbers(val);
        if (v.size() != 3) throw bad("expected 3 numbers");
        cfg.noise.sigma_t_mm = {v[0], v[1], v[2]};
      } else if (key == "noise_seed") cfg.noise.seed = std::stoull(val);
      else if (key == "sensor_depth_sigma_mm") cfg.sensor.depth_sigma_mm = std::stod(val);
      else if (key == "sensor_dropout") cfg.sensor.dropout = std::stod(val);
      else if (key == "sensor_intensity_sigma") cfg.sensor.intensity_sigma = std::stod(val);
      else throw bad("unknown key");
    } catch (const Error&) {
      throw;
    } catch (const std::exception& e) {
      throw bad(e.what());
    }
  }
  return cfg;
}

AppConfig parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::MissingFile, path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), path);
}

}  // namespace poseflow
