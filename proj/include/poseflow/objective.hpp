#pragma once

#include <vector>

#include "poseflow/flow.hpp"
#include "poseflow/geometry.hpp"

namespace poseflow {

/// Mean over jointly valid pixels of |du_p - du_g| + |dv_p - dv_g|; the depth
/// component is excluded by definition. Throws EmptyMask when the shared
/// validity mask is empty.
double flow_loss(const FlowField& pred, const FlowField& gt);

enum class PointDistance { L1, L2 };

/// Mean per-point distance between the model points transformed by the two
/// poses. L1 is the training reduction; L2 gives the ADD metric.
double pose_loss(const Pose& p_pred, const Pose& p_gt,
                 const std::vector<Eigen::Vector3d>& model_pts,
                 PointDistance dist = PointDistance::L1);

struct LossBreakdown {
  std::vector<double> flow;    // per iteration, px
  std::vector<double> pose;    // per iteration, mm
  std::vector<double> weight;  // gamma^(N-k)
  double total = 0;
};

constexpr double kLossGamma = 0.8;
constexpr double kLossAlpha = 0.1;
constexpr int kLossIterations = 8;

/// Exponentially weighted sum over iterations k = 1..N:
/// sum gamma^(N-k) * (pose_k + alpha * flow_k). Throws LengthMismatch unless
/// both series have exactly N entries.
LossBreakdown total_loss(const std::vector<double>& flow_losses,
                         const std::vector<double>& pose_losses, double gamma = kLossGamma,
                         double alpha = kLossAlpha, int n = kLossIterations);

}  // namespace poseflow
