#pragma once

#include <cstdint>
#include <string>

#include "poseflow/core.hpp"
#include "poseflow/geometry.hpp"
#include "poseflow/mesh.hpp"
#include "poseflow/render.hpp"

namespace poseflow {

enum class ShapeKind { Cube, Icosphere, Cylinder, RandomConvex };

const char* shape_name(ShapeKind kind);
ShapeKind shape_from_name(const std::string& name);

TriMesh make_cube(double edge_mm);
TriMesh make_icosphere(double radius_mm, int subdivisions = 2);
TriMesh make_cylinder(double radius_mm, double height_mm, int segments = 24);
/// Random affine image of an icosphere: a genuinely convex polytope.
TriMesh make_random_convex(double target_diameter_mm, std::uint64_t seed);

/// Pose-initialization noise. Gaussian: per-axis rotation jitter (deg) and
/// translation jitter (mm). Level: rotation of exactly L degrees about a
/// random axis plus a translation of exactly L mm in a random direction.
struct NoiseSpec {
  enum class Mode { Gaussian, Level } mode = Mode::Gaussian;
  Eigen::Vector3d sigma_rot_deg{15, 15, 15};
  Eigen::Vector3d sigma_t_mm{15, 15, 50};
  double level = 15;  // degrees and millimeters
  std::uint64_t seed = 0;
};

Pose perturb_pose(const Pose& p_gt, const NoiseSpec& spec);

/// Level-mode perturbation with pinned directions; magnitudes stay exact.
/// Used by noise sweeps so levels differ only in magnitude.
Pose perturb_pose_level(const Pose& p_gt, double level, const Eigen::Vector3d& rot_axis,
                        const Eigen::Vector3d& t_dir);

struct SensorNoise {
  double depth_sigma_mm = 2.0;
  double dropout = 0.02;
  double intensity_sigma = 0.02;

  static SensorNoise none() { return {0.0, 0.0, 0.0}; }
};

struct GenParams {
  ShapeKind shape = ShapeKind::Cube;
  SensorNoise noise;
  double occluder_fraction = 0.0;  // fraction of the object mask to cover
  Intrinsics camera{572.4, 573.5, 325.26, 242.05, 640, 480};
};

struct SyntheticScene {
  TriMesh mesh;
  std::string mesh_name;
  Pose gt;
  Intrinsics camera;
  GrayImage rgb;           // observed intensity with sensor noise
  DepthMap depth;          // observed depth with sensor noise / occlusion
  DepthMap clean_depth;    // noiseless render, occluder composited
  double occluder_fraction = 0;
  std::uint64_t seed = 0;
};

/// Deterministic in `seed`: mesh scale, ground-truth pose, occluder placement
/// and sensor noise all derive from per-purpose RNG streams.
SyntheticScene gen_scene(const GenParams& params, std::uint64_t seed);

}  // namespace poseflow
