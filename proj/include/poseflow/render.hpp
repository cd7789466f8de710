#pragma once

#include <cstdint>

#include "poseflow/core.hpp"
#include "poseflow/geometry.hpp"
#include "poseflow/mesh.hpp"

namespace poseflow {

/// Rasterized view of a mesh under a pose. mask(p) <=> depth(p) > 0 <=>
/// face_id(p) >= 0.
struct RenderOutput {
  DepthMap depth;            // camera-space z, mm; 0 = background
  Mask mask;
  GrayImage intensity;       // flat Lambertian, headlight along camera -z
  Grid<std::int32_t> face_id;  // -1 = background
};

constexpr double kNearPlaneMm = 1.0;

/// Perspective z-buffered rasterization at pixel centers. Triangles with any
/// vertex at z <= 1 mm are dropped. Deterministic: equal depths keep the
/// lower face index.
RenderOutput render(const TriMesh& mesh, const Pose& pose, const Intrinsics& k);

/// Pixel-aligned point cloud in the camera frame; valid entries have z > 0.
struct PointCloud {
  int rows = 0, cols = 0;
  std::vector<Eigen::Vector3d> points;
  std::vector<std::uint8_t> valid;

  const Eigen::Vector3d& at(int r, int c) const { return points[static_cast<size_t>(r) * cols + c]; }
  bool is_valid(int r, int c) const { return valid[static_cast<size_t>(r) * cols + c] != 0; }
};

/// Back-projects every valid depth pixel through the pinhole model.
PointCloud lift(const DepthMap& depth, const Intrinsics& k);

/// (u, v, z) of a camera-frame point; throws InvalidDepth for z <= 0.
Eigen::Vector3d project(const Eigen::Vector3d& point, const Intrinsics& k);

/// Virtual camera for a square object-centered crop: rendering with the
/// returned intrinsics at out_size^2 matches crop-then-resize of the source
/// view. Throws OutOfView when nothing projects in front of the camera.
Intrinsics crop_camera(const TriMesh& mesh, const Pose& pose, const Intrinsics& k,
                       int out_size = 256, double pad = 1.4);

/// Resamples an observed view into a crop camera frame. Intensity is sampled
/// bilinearly; depth bilinearly over valid pixels only (weight >= 0.5, else
/// invalid).
void resample_view(const GrayImage& gray, const DepthMap& depth, const Intrinsics& k_src,
                   const Intrinsics& k_dst, GrayImage& gray_out, DepthMap& depth_out);

/// Coarse cloud anchored at the centers of factor x factor pixel cells
/// (continuous coords (factor*j + factor/2, factor*i + factor/2)), with
/// depth sampled bilinearly over valid pixels.
PointCloud grid_cloud(const DepthMap& depth, const Intrinsics& k, int factor);

/// Bilinear sample over valid depth pixels at continuous (u, v); returns 0
/// when the valid weight mass is below half.
double sample_depth_bilinear(const DepthMap& depth, double u, double v);

}  // namespace poseflow
