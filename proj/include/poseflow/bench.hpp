#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "poseflow/refiner.hpp"
#include "poseflow/synthetic.hpp"

namespace poseflow {

/// Shared knobs for the synthetic benchmark suites. Suites are deterministic
/// in `seed` regardless of the thread count.
struct BenchOptions {
  std::uint64_t seed = 0;
  int scenes = 24;  // per level / per suite
  RefineConfig refine;
  SensorNoise sensor;
  double occlusion = 0.3;  // baseline-compare suite
  int threads = 0;         // 0 = hardware, capped by POSE_REFINE_THREADS
};

/// Per-scene error pair against ground truth.
struct PoseError {
  double rot_deg = 0;
  double trans_mm = 0;
  double add_mm = 0;
  double diameter_mm = 0;
};

PoseError pose_error(const Pose& est, const Pose& gt, const TriMesh& mesh);

struct NoiseSweepRow {
  double level = 0;
  int scenes = 0;
  double init_recall = 0;     // ADD < 10% diameter
  double refined_recall = 0;
  double init_rot_med_deg = 0, refined_rot_med_deg = 0;
  double init_t_med_mm = 0, refined_t_med_mm = 0;
  double init_add_med_mm = 0, refined_add_med_mm = 0;
};

/// Refined vs initialization recall (ADD < 10% diameter) and medians over the
/// level grid {3, 5, 10, 20, 30, 40, 50}. Perturbation directions are pinned
/// per scene so levels differ only in magnitude.
std::vector<NoiseSweepRow> run_noise_sweep_data(const BenchOptions& opts);

/// One CSV row per level.
std::string run_noise_sweep(const BenchOptions& opts);

/// Median errors per iteration count 0..10 on the L30 suite.
std::string run_iteration_sweep(const BenchOptions& opts);

/// Recurrent refiner vs the single-shot RANSAC-Kabsch baseline fed the
/// first-iteration matched flow, on occluded scenes.
std::string run_baseline_compare(const BenchOptions& opts);

std::string run_suite(const std::string& name, const BenchOptions& opts);

/// First-pass baseline estimate: crop, render, one zero-flow lookup, matched
/// flow at grid anchors, then ransac_kabsch_baseline on the crop depths.
/// Returns the estimated pose (residual applied to p_init).
Pose baseline_single_shot(const GrayImage& rgb, const DepthMap& depth, const TriMesh& mesh,
                          const Intrinsics& k, const Pose& p_init, const RefineConfig& cfg);

/// Effective parallelism: min(requested or hardware, POSE_REFINE_THREADS).
int effective_threads(int requested);

/// Deterministic parallel map: runs fn(i) for i in [0, n) on worker threads,
/// results land in index order.
void parallel_for(int n, int threads, const std::function<void(int)>& fn);

// --- CLI config file -------------------------------------------------------

/// key = value config mirroring RefineConfig and NoiseSpec ('#' comments).
struct AppConfig {
  RefineConfig refine;
  NoiseSpec noise;
  SensorNoise sensor;
};

AppConfig parse_config_file(const std::string& path);
AppConfig parse_config_text(const std::string& text, const std::string& origin = "<config>");

}  // namespace poseflow
