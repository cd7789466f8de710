#include "poseflow/objective.hpp"

#include <cmath>

namespace poseflow {

double flow_loss(const FlowField& pred, const FlowField& gt) {
  if (pred.rows != gt.rows || pred.cols != gt.cols)
    throw Error(ErrorCode::DimensionMismatch, "flow fields differ in dims");
  double sum = 0;
  size_t n = 0;
  for (size_t i = 0; i < pred.du.size(); ++i) {
    if (!pred.valid.raw()[i] || !gt.valid.raw()[i]) continue;
    sum += std::abs(pred.du[i] - gt.du[i]) + std::abs(pred.dv[i] - gt.dv[i]);
    ++n;
  }
  if (n == 0) throw Error(ErrorCode::EmptyMask, "no jointly valid flow pixels");
  return sum / static_cast<double>(n);
}

double pose_loss(const Pose& p_pred, const Pose& p_gt,
                 const std::vector<Eigen::Vector3d>& model_pts, PointDistance dist) {
  if (model_pts.empty()) return 0;
  double sum = 0;
  for (const auto& x : model_pts) {
    Eigen::Vector3d d = p_pred.apply(x) - p_gt.apply(x);
    sum += dist == PointDistance::L1 ? d.lpNorm<1>() : d.norm();
  }
  return sum / static_cast<double>(model_pts.size());
}

LossBreakdown total_loss(const std::vector<double>& flow_losses,
                         const std::vector<double>& pose_losses, double gamma, double alpha,
                         int n) {
  if (static_cast<int>(flow_losses.size()) != n || static_cast<int>(pose_losses.size()) != n)
    throw Error(ErrorCode::LengthMismatch,
                "expected exactly " + std::to_string(n) + " per-iteration losses");
  LossBreakdown out;
  out.flow = flow_losses;
  out.pose = pose_losses;
  out.weight.resize(n);
  for (int k = 1; k <= n; ++k) {
    double w = std::pow(gamma, n - k);
    out.weight[k - 1] = w;
    out.total += w * (pose_losses[k - 1] + alpha * flow_losses[k - 1]);
  }
  return out;
}

}  // namespace poseflow
