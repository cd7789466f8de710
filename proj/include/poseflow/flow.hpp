#pragma once

#include <string>

#include "poseflow/core.hpp"
#include "poseflow/geometry.hpp"
#include "poseflow/render.hpp"

namespace poseflow {

/// Per-pixel scene-flow vectors (du, dv in px; dz in mm). Values are defined
/// wherever the source mask is true; `valid` additionally requires the
/// warped location to stay inside the image (invalid cells keep their values
/// for lookup but are excluded from losses).
struct FlowField {
  int rows = 0, cols = 0;
  std::vector<double> du, dv, dz;
  Mask valid;

  FlowField() = default;
  FlowField(int r, int c)
      : rows(r), cols(c), du(static_cast<size_t>(r) * c, 0.0), dv(du), dz(du), valid(r, c, 0) {}

  size_t idx(int r, int c) const { return static_cast<size_t>(r) * cols + c; }
};

/// Per-pixel rigid transforms (camera frame): T maps source-cloud points to
/// their target positions. `confidence` optionally carries per-cell weights
/// from the estimator (empty = uniform).
struct DenseSE3Field {
  int rows = 0, cols = 0;
  std::vector<Pose> cells;
  Mask valid;
  std::vector<double> confidence;

  DenseSE3Field() = default;
  DenseSE3Field(int r, int c) : rows(r), cols(c), cells(static_cast<size_t>(r) * c), valid(r, c, 0) {}

  size_t idx(int r, int c) const { return static_cast<size_t>(r) * cols + c; }
};

struct TwistField {
  int rows = 0, cols = 0;
  std::vector<Twist> cells;
  Mask valid;
  int near_pi_cells = 0;  // cells dropped by the log map

  TwistField() = default;
  TwistField(int r, int c) : rows(r), cols(c), cells(static_cast<size_t>(r) * c), valid(r, c, 0) {}
};

/// Flow implied by moving the rendered surface from p_render to p_target:
/// back-projects every mask pixel through the rendered depth, re-projects
/// under p_target and differences the pixel coordinates and depth.
FlowField pose_induced_flow(const RenderOutput& render, const Pose& p_render,
                            const Pose& p_target, const Intrinsics& k);

/// Alias of pose_induced_flow with the ground-truth pose as target; feeds the
/// flow loss.
FlowField gt_flow(const RenderOutput& render, const Pose& p_render, const Pose& p_gt,
                  const Intrinsics& k);

/// Constant field equal to `residual` on the mask.
DenseSE3Field field_from_residual(const Pose& residual, const Mask& mask);

/// Applies each cell transform to the cloud point and differences the
/// projections.
FlowField field_to_flow(const DenseSE3Field& field, const PointCloud& cloud, const Intrinsics& k);

/// Per-cell log map; near-pi cells are marked invalid and counted.
TwistField field_to_twist(const DenseSE3Field& field);
DenseSE3Field twist_to_field(const TwistField& twists);

/// Cell-averaged flow on a coarser grid (values stay in full-resolution px).
FlowField downsample_flow(const FlowField& flow, int factor);

/// "SCF2" little-endian binary grid: magic, u32 rows, u32 cols, then rows*cols
/// records of (du, dv, dz) as f32 plus a validity byte.
void save_flow(const std::string& path, const FlowField& flow);
FlowField load_flow(const std::string& path);

}  // namespace poseflow
