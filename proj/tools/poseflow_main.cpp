#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "poseflow/bench.hpp"
#include "poseflow/bop_io.hpp"
#include "poseflow/flow.hpp"
#include "poseflow/metrics.hpp"
#include "poseflow/objective.hpp"
#include "poseflow/refiner.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace poseflow;

namespace {

json pose_to_json(const Pose& p) {
  json r = json::array();
  for (int i = 0; i < 9; ++i) r.push_back(p.R(i / 3, i % 3));
  json t = json::array({p.t.x(), p.t.y(), p.t.z()});
  return {{"R", r}, {"t_mm", t}};
}

Pose pose_from_json(const json& j, const std::string& origin) {
  try {
    Pose p;
    for (int i = 0; i < 9; ++i) p.R(i / 3, i % 3) = j.at("R")[i].get<double>();
    for (int i = 0; i < 3; ++i) p.t(i) = j.at("t_mm")[i].get<double>();
    if (orthonormality_drift(p.R) > 1e-4)
      throw Error(ErrorCode::MalformedJson, origin + ": R is not a rotation");
    p.R = orthonormalize(p.R);
    return p;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::MalformedJson, origin + ": " + e.what());
  }
}

json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::MissingFile, path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::MalformedJson, path + ": " + e.what());
  }
}

struct IntrinsicsFile {
  Intrinsics k;
  double depth_scale = 1.0;
};

IntrinsicsFile load_intrinsics(const std::string& path) {
  json j = load_json_file(path);
  try {
    IntrinsicsFile f;
    f.k.fx = j.at("fx").get<double>();
    f.k.fy = j.at("fy").get<double>();
    f.k.cx = j.at("cx").get<double>();
    f.k.cy = j.at("cy").get<double>();
    f.k.width = j.at("width").get<int>();
    f.k.height = j.at("height").get<int>();
    f.depth_scale = j.value("depth_scale", 1.0);
    return f;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::MalformedJson, path + ": " + e.what());
  }
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot open " + path + " for writing");
  out << text;
  if (!out) throw Error(ErrorCode::IoError, "write failed for " + path);
}

int cmd_refine(const std::string& mesh_path, const std::string& rgb_path,
               const std::string& depth_path, const std::string& intr_path,
               const std::string& pose_path, const std::string& config_path,
               const std::string& out_path, const std::string& dump_flow_prefix,
               std::uint64_t seed, bool have_seed) {
  AppConfig app;
  if (!config_path.empty()) app = parse_config_file(config_path);
  if (have_seed) app.refine.seed = seed;

  TriMesh mesh = load_mesh(mesh_path);
  IntrinsicsFile intr = load_intrinsics(intr_path);
  GrayImage rgb = read_gray_png(rgb_path);
  DepthMap depth = read_depth_png(depth_path, intr.depth_scale);
  Pose p_init = pose_from_json(load_json_file(pose_path), pose_path);

  auto t0 = std::chrono::steady_clock::now();
  RefineTrace trace = refine(rgb, depth, mesh, intr.k, p_init, app.refine);
  double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  if (!dump_flow_prefix.empty()) {
    for (size_t k = 1; k < trace.steps.size(); ++k) {
      std::ostringstream name;
      name << dump_flow_prefix << "flow_" << k << ".scf2";
      save_flow(name.str(), trace.steps[k].flow);
    }
  }

  json out = pose_to_json(trace.final_pose());
  out["iterations"] = static_cast<int>(trace.steps.size()) - 1;
  out["time_s"] = secs;
  json iters = json::array();
  for (size_t k = 0; k < trace.steps.size(); ++k) {
    const auto& d = trace.steps[k].diag;
    iters.push_back({{"skipped", d.skipped},
                     {"inlier_fraction", d.inlier_fraction},
                     {"valid_cells", d.valid_cells},
                     {"mean_peak_corr", d.mean_peak_corr},
                     {"dispersion_t_mm", d.dispersion_t_mm},
                     {"dispersion_r_deg", d.dispersion_r_deg}});
  }
  out["diagnostics"] = iters;

  std::string text = out.dump(1) + "\n";
  if (out_path.empty()) std::cout << text;
  else write_text(out_path, text);
  return 0;
}

int cmd_eval(const std::string& results_path, const std::string& dataset_root,
             const std::string& models_dir, const std::string& out_json,
             const std::string& out_csv) {
  std::vector<BopResultRow> rows = read_bop_results(results_path);
  if (rows.empty()) throw Error(ErrorCode::EmptyDataset, results_path + " has no rows");

  fs::path models = models_dir.empty() ? fs::path(dataset_root) / "models" : fs::path(models_dir);
  std::map<int, ObjectInfo> info;
  fs::path info_path = models / "models_info.json";
  if (fs::exists(info_path))
    for (auto& [id, oi] : load_models_info(info_path.string())) info[id] = oi;

  std::map<int, TriMesh> meshes;
  auto get_mesh = [&](int obj_id) -> const TriMesh& {
    auto it = meshes.find(obj_id);
    if (it != meshes.end()) return it->second;
    std::ostringstream name;
    name << "obj_";
    name.fill('0');
    name.width(6);
    name << obj_id;
    fs::path ply = models / (name.str() + ".ply");
    if (!fs::exists(ply)) throw Error(ErrorCode::MissingFile, ply.string());
    return meshes.emplace(obj_id, load_mesh(ply.string())).first->second;
  };

  std::vector<SampleErrors> samples;
  for (const auto& row : rows) {
    BopFrame frame = load_bop_scene(dataset_root, row.scene_id, row.im_id);
    const BopGtEntry* gt = nullptr;
    for (const auto& e : frame.gt)
      if (e.obj_id == row.obj_id) gt = &e;
    if (!gt)
      throw Error(ErrorCode::MalformedJson, "no GT for scene " + std::to_string(row.scene_id) +
                                                " image " + std::to_string(row.im_id) + " obj " +
                                                std::to_string(row.obj_id));
    const TriMesh& mesh = get_mesh(row.obj_id);
    SymmetrySet syms;
    auto it = info.find(row.obj_id);
    if (it != info.end()) syms = it->second.symmetries;
    samples.push_back(
        compute_sample_errors(row.pose, gt->pose, mesh, syms, frame.depth, frame.camera));
  }

  MetricReport report = average_recall(samples);
  std::string text = metric_report_json(report);
  if (out_json.empty()) std::cout << text;
  else write_text(out_json, text);
  if (!out_csv.empty()) write_sample_errors_csv(out_csv, samples);
  return 0;
}

int cmd_bench(const std::string& suite, int seeds, std::uint64_t seed,
              const std::string& config_path, const std::string& out_path, double occlusion) {
  BenchOptions opts;
  if (!config_path.empty()) {
    AppConfig app = parse_config_file(config_path);
    opts.refine = app.refine;
    opts.sensor = app.sensor;
  }
  opts.seed = seed;
  opts.scenes = seeds;
  opts.occlusion = occlusion;
  std::string csv = run_suite(suite, opts);
  if (out_path.empty()) std::cout << csv;
  else write_text(out_path, csv);
  return 0;
}

int cmd_synth_gen(const std::string& shapes_csv, int count, const std::string& out_dir,
                  std::uint64_t seed, double occlusion, bool no_noise, int scene_id) {
  std::vector<ShapeKind> shapes;
  std::stringstream ss(shapes_csv);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (!tok.empty()) shapes.push_back(shape_from_name(tok));
  }
  if (shapes.empty()) throw Error(ErrorCode::ParseError, "no shapes given");

  std::vector<SyntheticScene> scenes;
  for (int i = 0; i < count; ++i) {
    GenParams params;
    params.shape = shapes[i % shapes.size()];
    params.occluder_fraction = occlusion;
    if (no_noise) params.noise = SensorNoise::none();
    scenes.push_back(gen_scene(params, seed * 0x9e3779b97f4a7c15ull + i + 1));
  }
  write_bop_scenes(out_dir, scene_id, scenes);
  std::cout << "wrote " << count << " scenes under " << out_dir << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"6D object pose refinement via dense SE(3) scene-flow matching"};
  app.require_subcommand(1);

  // refine
  auto* refine_cmd = app.add_subcommand("refine", "refine a pose on one RGBD frame");
  std::string mesh_path, rgb_path, depth_path, intr_path, pose_path, config_path, out_path,
      dump_flow;
  std::uint64_t seed = 0;
  refine_cmd->add_option("--mesh", mesh_path, "object mesh (.ply/.obj)")->required();
  refine_cmd->add_option("--rgb", rgb_path, "rgb/gray png")->required();
  refine_cmd->add_option("--depth", depth_path, "16-bit depth png")->required();
  refine_cmd->add_option("--intrinsics", intr_path, "camera json")->required();
  refine_cmd->add_option("--init-pose", pose_path, "initial pose json")->required();
  refine_cmd->add_option("--config", config_path, "key=value config file");
  refine_cmd->add_option("--out", out_path, "output pose json (stdout when omitted)");
  refine_cmd->add_option("--dump-flow", dump_flow, "prefix for per-iteration SCF2 flow dumps");
  auto* seed_opt = refine_cmd->add_option("--seed", seed, "RNG seed override");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "score a BOP results CSV against a dataset");
  std::string results_path, dataset_root, models_dir, eval_json, eval_csv;
  eval_cmd->add_option("--results", results_path, "results CSV")->required();
  eval_cmd->add_option("--dataset", dataset_root, "BOP dataset root")->required();
  eval_cmd->add_option("--models", models_dir, "models directory (default <root>/models)");
  eval_cmd->add_option("--out", eval_json, "report json (stdout when omitted)");
  eval_cmd->add_option("--csv", eval_csv, "per-sample error CSV");

  // bench
  auto* bench_cmd = app.add_subcommand("bench", "synthetic benchmark suites");
  std::string suite;
  int seeds = 24;
  std::uint64_t bench_seed = 0;
  std::string bench_config, bench_out;
  double occlusion = 0.3;
  bench_cmd->add_option("--suite", suite, "noise-sweep | iteration-sweep | baseline-compare")
      ->required();
  bench_cmd->add_option("--seeds", seeds, "scenes per suite/level");
  bench_cmd->add_option("--seed", bench_seed, "base RNG seed");
  bench_cmd->add_option("--config", bench_config, "key=value config file");
  bench_cmd->add_option("--out", bench_out, "output CSV (stdout when omitted)");
  bench_cmd->add_option("--occlusion", occlusion, "occluder fraction (baseline-compare)");

  // synth gen
  auto* synth_cmd = app.add_subcommand("synth", "synthetic data tools");
  synth_cmd->require_subcommand(1);
  auto* gen_cmd = synth_cmd->add_subcommand("gen", "emit BOP-format synthetic scenes");
  std::string shapes = "cube,icosphere,cylinder", synth_out;
  int count = 8, scene_id = 0;
  std::uint64_t synth_seed = 0;
  double synth_occ = 0.0;
  bool no_noise = false;
  gen_cmd->add_option("--shapes", shapes, "comma-separated shape list");
  gen_cmd->add_option("--count", count, "number of scenes");
  gen_cmd->add_option("--out", synth_out, "output dataset root")->required();
  gen_cmd->add_option("--seed", synth_seed, "base RNG seed");
  gen_cmd->add_option("--occlusion", synth_occ, "occluder fraction");
  gen_cmd->add_flag("--no-noise", no_noise, "disable sensor noise");
  gen_cmd->add_option("--scene-id", scene_id, "scene id in the layout");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*refine_cmd)
      return cmd_refine(mesh_path, rgb_path, depth_path, intr_path, pose_path, config_path,
                        out_path, dump_flow, seed, seed_opt->count() > 0);
    if (*eval_cmd) return cmd_eval(results_path, dataset_root, models_dir, eval_json, eval_csv);
    if (*bench_cmd) return cmd_bench(suite, seeds, bench_seed, bench_config, bench_out, occlusion);
    if (*synth_cmd)
      return cmd_synth_gen(shapes, count, synth_out, synth_seed, synth_occ, no_noise, scene_id);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: Internal: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
