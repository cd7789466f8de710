#pragma once

#include <memory>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "poseflow/correlation.hpp"
#include "poseflow/flow.hpp"
#include "poseflow/geometry.hpp"
#include "poseflow/mesh.hpp"
#include "poseflow/render.hpp"

namespace poseflow {

/// GRU + head parameters for the neural field backend (inference only).
/// Serialized as "SCW2": magic, u32 version, u32 tensor count, then per
/// tensor (u16 name length, name, u32 rank, u32 dims..., f32 data).
struct NeuralWeights {
  int input_dim = 0;   // lookup features + 6 twist channels
  int hidden_dim = 0;
  Eigen::MatrixXf w_z, w_r, w_h;  // [hidden, input + hidden]
  Eigen::VectorXf b_z, b_r, b_h;
  Eigen::MatrixXf twist_w;        // [6, hidden]
  Eigen::VectorXf twist_b;
  Eigen::MatrixXf pose_w;         // [9, hidden]
  Eigen::VectorXf pose_b;
};

NeuralWeights load_weights(const std::string& path);
void save_weights(const std::string& path, const NeuralWeights& w);
/// Small random initialization, for smoke testing the inference path.
NeuralWeights make_random_weights(int input_dim, int hidden_dim, std::uint64_t seed);

/// One GRU cell update: z/r gates sigmoid, candidate tanh,
/// h' = (1 - z) * h + z * candidate.
Eigen::VectorXf gru_cell(const Eigen::VectorXf& x, const Eigen::VectorXf& h,
                         const NeuralWeights& w);

struct HiddenState {
  int rows = 0, cols = 0, dim = 0;
  std::vector<float> data;

  HiddenState() = default;
  HiddenState(int r, int c, int d)
      : rows(r), cols(c), dim(d), data(static_cast<size_t>(r) * c * d, 0.f) {}
};

enum class Backend { Classical, Neural };
enum class VoteMode { IrlsHuber, Ransac };

struct RansacParams {
  int iters = 256;
  double inlier_mm = 10.0;
};

struct RefineConfig {
  int iterations = 8;
  int lookup_radius = 4;
  int pyramid_levels = 4;
  Backend backend = Backend::Classical;
  std::shared_ptr<const NeuralWeights> weights;  // required for Backend::Neural
  VoteMode vote = VoteMode::IrlsHuber;
  double huber_delta_mm = 10.0;
  int irls_iters = 5;
  RansacParams ransac;
  int patch = 5;  // local-fit window, odd
  std::uint64_t seed = 0;
  double softargmax_temp = 0.1;
  double corr_gate = 0.2;
  int crop_size = 256;
  double crop_pad = 1.4;
  int min_valid_pixels = 100;
};

struct IterationDiagnostics {
  bool skipped = false;
  double inlier_fraction = 0;
  double mean_peak_corr = 0;
  double dispersion_t_mm = 0;   // std of per-cell translational twists
  double dispersion_r_deg = 0;  // std of per-cell rotation angles
  int valid_cells = 0;
};

struct RefineStep {
  Pose pose;
  PoseResidual9 residual;  // decodes against the previous pose
  FlowField flow;          // pose-induced flow at crop resolution
  DenseSE3Field field;     // motion field after the global reset, grid res
  IterationDiagnostics diag;
};

/// Full refinement record; steps[0] holds the initial pose.
struct RefineTrace {
  std::vector<RefineStep> steps;
  Intrinsics crop;

  const Pose& final_pose() const { return steps.back().pose; }
};

/// Sub-pixel correspondences from a lookup window: soft-argmax (temperature
/// cfg.softargmax_temp) over the level-0 window, gated by peak correlation.
/// Returned flow lives on the source grid in full-resolution pixels; dz holds
/// the sampled target-depth minus source-depth where both are available.
struct MatchResult {
  FlowField flow;           // grid-resolution matches
  Grid<double> peak;        // per-cell peak correlation
  Grid<double> distinct;    // peak minus the best correlation away from it
  double mean_peak = 0;
};

MatchResult match_correspondences(const LookupWindow& win, const RefineConfig& cfg);

/// Deterministic field backend. Distinct cells take their soft-argmax
/// correspondence; correlation plateaus keep the flow-guided association.
/// A global robust fit of the 3D pairs is refined by coordinate ascent on
/// the summed correlation score (coarse pyramid levels first), which pins
/// the rotation components that depth alone leaves free; the field is the
/// per-cell patch Kabsch fit of the re-associated pairs. Cells with a weak
/// peak or fewer than 6 valid pairs in the patch stay invalid.
/// `cloud_src` is grid-aligned with the lookup; `cloud_tgt` is the
/// full-resolution observed cloud.
/// `score_pyr`, when given, supplies the correlation volume for the score
/// ascent (intensity-only features: geometry descriptors encode surface
/// orientation, which does not survive the candidate warp).
DenseSE3Field classical_field(const LookupWindow& win, const PointCloud& cloud_src,
                              const PointCloud& cloud_tgt, const Intrinsics& k,
                              const RefineConfig& cfg,
                              const CorrelationPyramid* score_pyr = nullptr);

/// Per-pixel GRU update of the motion field: input is the lookup stack plus
/// the twist of the previous field cell; the twist head output is applied as
/// a left retraction exp(delta) * T_prev.
std::pair<DenseSE3Field, HiddenState> neural_step(const LookupWindow& win,
                                                  const DenseSE3Field& field_prev,
                                                  const HiddenState& hidden,
                                                  const NeuralWeights& weights);

/// Robust global rigid fit over (X_i, T_i X_i) correspondences from the valid
/// field cells; IRLS-Huber or RANSAC per cfg. Throws TooFewCells (< 3 valid
/// cells) or DegenerateConfiguration.
std::pair<Pose, IterationDiagnostics> vote_global_pose(const DenseSE3Field& field,
                                                       const PointCloud& cloud_src,
                                                       const RefineConfig& cfg);

/// Two-stage baseline: lifts 2D flow endpoints through both depth maps and
/// runs RANSAC + Kabsch on the 3D pairs. Throws TooFewCorrespondences /
/// NoConsensus.
Pose ransac_kabsch_baseline(const FlowField& flow2d, const DepthMap& depth1,
                            const DepthMap& depth2, const Intrinsics& k,
                            const RefineConfig& cfg);

/// The recurrent refinement loop: crop, render the reference once, build the
/// correlation pyramid once, then per iteration look up with the pose-induced
/// flow, estimate the dense field, vote a global residual, update the pose
/// and reset the motion field. Backend failures skip the iteration and carry
/// the pose forward.
RefineTrace refine(const GrayImage& rgb, const DepthMap& depth, const TriMesh& mesh,
                   const Intrinsics& k, const Pose& p_init, const RefineConfig& cfg);

}  // namespace poseflow
