#include "poseflow/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>

#include "poseflow/rng.hpp"

namespace poseflow {

const char* shape_name(ShapeKind kind) {
  switch (kind) {
    case ShapeKind::Cube: return "cube";
    case ShapeKind::Icosphere: return "icosphere";
    case ShapeKind::Cylinder: return "cylinder";
    case ShapeKind::RandomConvex: return "random-convex";
  }
  return "unknown";
}

ShapeKind shape_from_name(const std::string& name) {
  if (name == "cube") return ShapeKind::Cube;
  if (name == "icosphere") return ShapeKind::Icosphere;
  if (name == "cylinder") return ShapeKind::Cylinder;
  if (name == "random-convex" || name == "convex") return ShapeKind::RandomConvex;
  throw Error(ErrorCode::ParseError, "unknown shape '" + name + "'");
}

TriMesh make_cube(double edge_mm) {
  const double h = edge_mm / 2;
  std::vector<Eigen::Vector3d> v = {{-h, -h, -h}, {h, -h, -h}, {h, h, -h}, {-h, h, -h},
                                    {-h, -h, h},  {h, -h, h},  {h, h, h},  {-h, h, h}};
  std::vector<std::array<std::int32_t, 3>> f = {
      {0, 2, 1}, {0, 3, 2}, {4, 5, 6}, {4, 6, 7}, {0, 1, 5}, {0, 5, 4},
      {2, 3, 7}, {2, 7, 6}, {1, 2, 6}, {1, 6, 5}, {3, 0, 4}, {3, 4, 7}};
  return make_mesh(std::move(v), std::move(f));
}

TriMesh make_icosphere(double radius_mm, int subdivisions) {
  const double t = (1.0 + std::sqrt(5.0)) / 2.0;
  std::vector<Eigen::Vector3d> v = {{-1, t, 0}, {1, t, 0},  {-1, -t, 0}, {1, -t, 0},
                                    {0, -1, t}, {0, 1, t},  {0, -1, -t}, {0, 1, -t},
                                    {t, 0, -1}, {t, 0, 1},  {-t, 0, -1}, {-t, 0, 1}};
  std::vector<std::array<std::int32_t, 3>> f = {
      {0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11}, {1, 5, 9},  {5, 11, 4},
      {11, 10, 2}, {10, 7, 6}, {7, 1, 8},  {3, 9, 4},  {3, 4, 2},   {3, 2, 6},  {3, 6, 8},
      {3, 8, 9},  {4, 9, 5},  {2, 4, 11},  {6, 2, 10}, {8, 6, 7},   {9, 8, 1}};
  for (auto& p : v) p.normalize();

  for (int s = 0; s < subdivisions; ++s) {
    std::map<std::pair<int, int>, std::int32_t> midpoint;
    auto mid = [&](std::int32_t a, std::int32_t b) -> std::int32_t {
      auto key = std::minmax(a, b);
      auto it = midpoint.find(key);
      if (it != midpoint.end()) return it->second;
      Eigen::Vector3d m = (v[a] + v[b]).normalized();
      v.push_back(m);
      std::int32_t idx = static_cast<std::int32_t>(v.size() - 1);
      midpoint.emplace(key, idx);
      return idx;
    };
    std::vector<std::array<std::int32_t, 3>> nf;
    nf.reserve(f.size() * 4);
    for (const auto& tri : f) {
      std::int32_t a = mid(tri[0], tri[1]);
      std::int32_t b = mid(tri[1], tri[2]);
      std::int32_t c = mid(tri[2], tri[0]);
      nf.push_back({tri[0], a, c});
      nf.push_back({tri[1], b, a});
      nf.push_back({tri[2], c, b});
      nf.push_back({a, b, c});
    }
    f = std::move(nf);
  }
  for (auto& p : v) p *= radius_mm;
  return make_mesh(std::move(v), std::move(f));
}

TriMesh make_cylinder(double radius_mm, double height_mm, int segments) {
  std::vector<Eigen::Vector3d> v;
  std::vector<std::array<std::int32_t, 3>> f;
  const double h = height_mm / 2;
  for (int i = 0; i < segments; ++i) {
    double a = 2 * std::numbers::pi * i / segments;
    v.emplace_back(radius_mm * std::cos(a), radius_mm * std::sin(a), -h);
    v.emplace_back(radius_mm * std::cos(a), radius_mm * std::sin(a), h);
  }
  std::int32_t bottom_center = static_cast<std::int32_t>(v.size());
  v.emplace_back(0, 0, -h);
  std::int32_t top_center = static_cast<std::int32_t>(v.size());
  v.emplace_back(0, 0, h);

  for (int i = 0; i < segments; ++i) {
    std::int32_t b0 = 2 * i, t0 = 2 * i + 1;
    std::int32_t b1 = 2 * ((i + 1) % segments), t1 = 2 * ((i + 1) % segments) + 1;
    f.push_back({b0, b1, t1});
    f.push_back({b0, t1, t0});
    f.push_back({bottom_center, b1, b0});
    f.push_back({top_center, t0, t1});
  }
  return make_mesh(std::move(v), std::move(f));
}

TriMesh make_random_convex(double target_diameter_mm, std::uint64_t seed) {
  CounterRng rng(seed, "convex");
  TriMesh sphere = make_icosphere(1.0, 1);
  // random anisotropic scaling + rotation keeps the hull property
  Eigen::Vector3d axes(rng.uniform(0.5, 1.0), rng.uniform(0.5, 1.0), rng.uniform(0.5, 1.0));
  Eigen::Matrix3d rot = rng.rotation();
  std::vector<Eigen::Vector3d> v = sphere.vertices;
  for (auto& p : v) p = rot * axes.asDiagonal() * p;
  double d = mesh_diameter(v);
  double s = target_diameter_mm / d;
  for (auto& p : v) p *= s;
  return make_mesh(std::move(v), std::move(sphere.faces));
}

Pose perturb_pose(const Pose& p_gt, const NoiseSpec& spec) {
  CounterRng rng(spec.seed, "perturb");
  if (spec.mode == NoiseSpec::Mode::Level) {
    Eigen::Vector3d axis = rng.unit_vector();
    Eigen::Vector3d dir = rng.unit_vector();
    return perturb_pose_level(p_gt, spec.level, axis, dir);
  }
  const double deg = std::numbers::pi / 180.0;
  Eigen::Vector3d r(rng.gaussian() * spec.sigma_rot_deg.x() * deg,
                    rng.gaussian() * spec.sigma_rot_deg.y() * deg,
                    rng.gaussian() * spec.sigma_rot_deg.z() * deg);
  Eigen::Matrix3d jitter = (Eigen::AngleAxisd(r.x(), Eigen::Vector3d::UnitX()) *
                            Eigen::AngleAxisd(r.y(), Eigen::Vector3d::UnitY()) *
                            Eigen::AngleAxisd(r.z(), Eigen::Vector3d::UnitZ()))
                               .toRotationMatrix();
  Eigen::Vector3d dt(rng.gaussian() * spec.sigma_t_mm.x(), rng.gaussian() * spec.sigma_t_mm.y(),
                     rng.gaussian() * spec.sigma_t_mm.z());
  Pose out;
  out.R = jitter * p_gt.R;
  if (orthonormality_drift(out.R) > 1e-12) out.R = orthonormalize(out.R);
  out.t = p_gt.t + dt;
  return out;
}

Pose perturb_pose_level(const Pose& p_gt, double level, const Eigen::Vector3d& rot_axis,
                        const Eigen::Vector3d& t_dir) {
  const double rad = level * std::numbers::pi / 180.0;
  Eigen::Matrix3d jitter = Eigen::AngleAxisd(rad, rot_axis.normalized()).toRotationMatrix();
  Pose out;
  out.R = jitter * p_gt.R;
  if (orthonormality_drift(out.R) > 1e-12) out.R = orthonormalize(out.R);
  out.t = p_gt.t + level * t_dir.normalized();
  return out;
}

SyntheticScene gen_scene(const GenParams& params, std::uint64_t seed) {
  SyntheticScene scene;
  scene.seed = seed;
  scene.camera = params.camera;
  scene.occluder_fraction = params.occluder_fraction;

  CounterRng shape_rng(seed, "shape");
  double diameter = shape_rng.uniform(80.0, 200.0);
  switch (params.shape) {
    case ShapeKind::Cube:
      scene.mesh = make_cube(diameter / std::sqrt(3.0));
      break;
    case ShapeKind::Icosphere:
      scene.mesh = make_icosphere(diameter / 2.0);
      break;
    case ShapeKind::Cylinder: {
      double height = diameter * shape_rng.uniform(0.6, 0.9);
      double radius = std::sqrt(diameter * diameter - height * height) / 2.0;
      scene.mesh = make_cylinder(radius, height, 12);
      break;
    }
    case ShapeKind::RandomConvex:
      scene.mesh = make_random_convex(diameter, seed);
      break;
  }
  scene.mesh_name = shape_name(params.shape);

  CounterRng pose_rng(seed, "pose");
  scene.gt.R = pose_rng.rotation();
  scene.gt.t = {pose_rng.uniform(-60.0, 60.0), pose_rng.uniform(-40.0, 40.0),
                pose_rng.uniform(600.0, 1400.0)};

  RenderOutput ren = render(scene.mesh, scene.gt, scene.camera);
  scene.rgb = ren.intensity;
  scene.depth = ren.depth;

  // planar occluder: cover exactly the requested fraction of the mask by
  // sweeping a half-plane with random orientation across the silhouette
  if (params.occluder_fraction > 0) {
    size_t mask_px = 0;
    for (const auto m : ren.mask.raw()) mask_px += m;
    if (mask_px > 0) {
      CounterRng occ_rng(seed, "occluder");
      double ang = occ_rng.uniform(0.0, 2 * std::numbers::pi);
      Eigen::Vector2d dir(std::cos(ang), std::sin(ang));
      std::vector<std::pair<double, size_t>> proj;  // (signed coord, pixel index)
      proj.reserve(mask_px);
      for (int r = 0; r < ren.mask.rows(); ++r)
        for (int c = 0; c < ren.mask.cols(); ++c)
          if (ren.mask.at(r, c))
            proj.emplace_back(dir.x() * c + dir.y() * r, static_cast<size_t>(r) * ren.mask.cols() + c);
      std::sort(proj.begin(), proj.end());
      size_t cover = static_cast<size_t>(std::llround(params.occluder_fraction *
                                                      static_cast<double>(mask_px)));
      cover = std::min(cover, proj.size());
      // occluder plane sits between camera and object
      double min_z = 1e30;
      for (const auto& z : ren.depth.raw())
        if (z > 0) min_z = std::min(min_z, z);
      double occ_z = std::max(kNearPlaneMm + 1.0, min_z * 0.7);
      double occ_shade = occ_rng.uniform(0.35, 0.65);
      for (size_t i = 0; i < cover; ++i) {
        size_t px = proj[i].second;
        scene.depth.raw()[px] = occ_z;
        scene.rgb.raw()[px] = occ_shade;
      }
    }
  }
  scene.clean_depth = scene.depth;

  CounterRng noise_rng(seed, "sensor");
  if (params.noise.depth_sigma_mm > 0 || params.noise.dropout > 0) {
    for (auto& z : scene.depth.raw()) {
      if (z <= 0) continue;
      if (params.noise.dropout > 0 && noise_rng.uniform() < params.noise.dropout) {
        z = 0;
        continue;
      }
      if (params.noise.depth_sigma_mm > 0)
        z = std::max(0.0, z + noise_rng.gaussian() * params.noise.depth_sigma_mm);
    }
  }
  if (params.noise.intensity_sigma > 0) {
    CounterRng int_rng(seed, "intensity");
    for (auto& g : scene.rgb.raw())
      g = std::clamp(g + int_rng.gaussian() * params.noise.intensity_sigma, 0.0, 1.0);
  }
  return scene;
}

}  // namespace poseflow
