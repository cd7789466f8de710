#pragma once

#include <string>
#include <vector>

#include "poseflow/geometry.hpp"
#include "poseflow/mesh.hpp"
#include "poseflow/render.hpp"

namespace poseflow {

/// Object-frame symmetry transforms; the identity is always present.
struct SymmetrySet {
  std::vector<Pose> transforms{Pose::identity()};

  static SymmetrySet identity_only() { return {}; }
  void add(const Pose& s) { transforms.push_back(s); }
};

/// Visible surface discrepancy for one misalignment tolerance tau. Renders
/// the model under both poses; a pixel is visible when its rendered depth is
/// within `delta` in front of the scene depth; the error is the fraction of
/// the visibility-mask union where a pose is invisible or the depths differ
/// by more than tau. Throws EmptyUnion when both renders are empty.
double vsd(const Pose& p_est, const Pose& p_gt, const TriMesh& mesh, const DepthMap& scene_depth,
           const Intrinsics& k, double tau_mm, double delta_mm = 15.0);

/// vsd over a grid of tau values (shares the two renders).
std::vector<double> vsd_curve(const Pose& p_est, const Pose& p_gt, const TriMesh& mesh,
                              const DepthMap& scene_depth, const Intrinsics& k,
                              const std::vector<double>& taus_mm, double delta_mm = 15.0);

/// Depth-map-level VSD core, shared by the rendered path and usable directly
/// on hand-built fixtures.
double vsd_from_depths(const DepthMap& est_depth, const DepthMap& gt_depth,
                       const DepthMap& scene_depth, double tau_mm, double delta_mm = 15.0);

/// Max symmetry-aware surface distance (mm): min over symmetries of the max
/// vertex displacement between the two poses.
double mssd(const Pose& p_est, const Pose& p_gt, const TriMesh& mesh, const SymmetrySet& syms);

/// Max symmetry-aware projection distance (px).
double mspd(const Pose& p_est, const Pose& p_gt, const TriMesh& mesh, const SymmetrySet& syms,
            const Intrinsics& k);

/// Per-sample error record for recall aggregation.
struct SampleErrors {
  std::vector<double> vsd;  // one entry per tau in the standard grid
  double mssd_mm = 0;
  double mspd_px = 0;
  double diameter_mm = 0;
  int image_width = 640;
};

struct MetricReport {
  double recall_vsd = 0;
  double recall_mssd = 0;
  double recall_mspd = 0;
  double average_recall = 0;
  size_t samples = 0;
};

/// tau grid for VSD as fractions of the object diameter: 5%..50% step 5%.
std::vector<double> vsd_tau_fractions();

/// BOP-style aggregation: VSD recall over tau x threshold grid (thresholds
/// 0.05..0.5), MSSD over 5%..50% of diameter, MSPD over (5..50)*r px with
/// r = image_width / 640. Throws EmptyDataset for an empty sample set.
MetricReport average_recall(const std::vector<SampleErrors>& samples);

/// Computes all three errors for a sample (VSD over the standard tau grid).
SampleErrors compute_sample_errors(const Pose& p_est, const Pose& p_gt, const TriMesh& mesh,
                                   const SymmetrySet& syms, const DepthMap& scene_depth,
                                   const Intrinsics& k, int max_vertices = 10000);

/// Histogram of relative error improvement (init - refined) / max(init, eps),
/// clamped into [-1, 1] over `bins` fixed-width bins.
std::vector<int> improvement_histogram(const std::vector<double>& init_err,
                                       const std::vector<double>& refined_err, int bins = 20);

std::string metric_report_json(const MetricReport& report);
void write_sample_errors_csv(const std::string& path, const std::vector<SampleErrors>& samples);

}  // namespace poseflow
