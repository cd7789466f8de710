#include "poseflow/render.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Geometry>

namespace poseflow {

RenderOutput render(const TriMesh& mesh, const Pose& pose, const Intrinsics& k) {
  RenderOutput out;
  out.depth = DepthMap(k.height, k.width, 0.0);
  out.mask = Mask(k.height, k.width, 0);
  out.intensity = GrayImage(k.height, k.width, 0.0);
  out.face_id = Grid<std::int32_t>(k.height, k.width, -1);

  std::vector<Eigen::Vector3d> cam(mesh.vertices.size());
  for (size_t i = 0; i < mesh.vertices.size(); ++i) cam[i] = pose.apply(mesh.vertices[i]);

  std::vector<double> zbuf(static_cast<size_t>(k.height) * k.width,
                           std::numeric_limits<double>::infinity());

  for (std::int32_t f = 0; f < static_cast<std::int32_t>(mesh.faces.size()); ++f) {
    const auto& face = mesh.faces[f];
    const Eigen::Vector3d& a = cam[face[0]];
    const Eigen::Vector3d& b = cam[face[1]];
    const Eigen::Vector3d& c = cam[face[2]];
    if (a.z() <= kNearPlaneMm || b.z() <= kNearPlaneMm || c.z() <= kNearPlaneMm) continue;

    const double ua = k.fx * a.x() / a.z() + k.cx, va = k.fy * a.y() / a.z() + k.cy;
    const double ub = k.fx * b.x() / b.z() + k.cx, vb = k.fy * b.y() / b.z() + k.cy;
    const double uc = k.fx * c.x() / c.z() + k.cx, vc = k.fy * c.y() / c.z() + k.cy;

    const double area = (ub - ua) * (vc - va) - (vb - va) * (uc - ua);
    if (area == 0) continue;

    // pixel centers (col + 0.5, row + 0.5) within the screen bbox
    int c0 = std::max(0, static_cast<int>(std::ceil(std::min({ua, ub, uc}) - 0.5)));
    int c1 = std::min(k.width - 1, static_cast<int>(std::floor(std::max({ua, ub, uc}) - 0.5)));
    int r0 = std::max(0, static_cast<int>(std::ceil(std::min({va, vb, vc}) - 0.5)));
    int r1 = std::min(k.height - 1, static_cast<int>(std::floor(std::max({va, vb, vc}) - 0.5)));
    if (c0 > c1 || r0 > r1) continue;

    Eigen::Vector3d n = (b - a).cross(c - a);
    double nn = n.norm();
    double shade = nn > 0 ? std::clamp(std::abs(n.z()) / nn, 0.0, 1.0) : 0.0;

    const double inv_area = 1.0 / area;
    for (int r = r0; r <= r1; ++r) {
      const double py = r + 0.5;
      for (int col = c0; col <= c1; ++col) {
        const double px = col + 0.5;
        double w0 = ((uc - ub) * (py - vb) - (vc - vb) * (px - ub)) * inv_area;
        double w1 = ((ua - uc) * (py - vc) - (va - vc) * (px - uc)) * inv_area;
        double w2 = 1.0 - w0 - w1;
        if (w0 < 0 || w1 < 0 || w2 < 0) continue;
        // perspective-correct depth from screen-space barycentrics
        double inv_z = w0 / a.z() + w1 / b.z() + w2 / c.z();
        double z = 1.0 / inv_z;
        size_t idx = static_cast<size_t>(r) * k.width + col;
        if (z < zbuf[idx]) {
          zbuf[idx] = z;
          out.depth.at(r, col) = z;
          out.mask.at(r, col) = 1;
          out.intensity.at(r, col) = shade;
          out.face_id.at(r, col) = f;
        }
      }
    }
  }
  return out;
}

PointCloud lift(const DepthMap& depth, const Intrinsics& k) {
  if (!depth.same_shape(k.height, k.width))
    throw Error(ErrorCode::DimensionMismatch, "depth dimensions do not match intrinsics");
  PointCloud pc;
  pc.rows = depth.rows();
  pc.cols = depth.cols();
  pc.points.assign(depth.size(), Eigen::Vector3d::Zero());
  pc.valid.assign(depth.size(), 0);
  for (int r = 0; r < pc.rows; ++r) {
    const double v = r + 0.5;
    for (int c = 0; c < pc.cols; ++c) {
      double z = depth.at(r, c);
      if (z <= 0) continue;
      const double u = c + 0.5;
      size_t i = static_cast<size_t>(r) * pc.cols + c;
      pc.points[i] = {(u - k.cx) * z / k.fx, (v - k.cy) * z / k.fy, z};
      pc.valid[i] = 1;
    }
  }
  return pc;
}

Eigen::Vector3d project(const Eigen::Vector3d& point, const Intrinsics& k) {
  if (point.z() <= 0) throw Error(ErrorCode::InvalidDepth, "projection requires z > 0");
  return {k.fx * point.x() / point.z() + k.cx, k.fy * point.y() / point.z() + k.cy, point.z()};
}

Intrinsics crop_camera(const TriMesh& mesh, const Pose& pose, const Intrinsics& k, int out_size,
                       double pad) {
  double umin = std::numeric_limits<double>::infinity(), umax = -umin;
  double vmin = umin, vmax = -umin;
  for (const auto& v : mesh.vertices) {
    Eigen::Vector3d p = pose.apply(v);
    if (p.z() <= kNearPlaneMm) continue;
    double u = k.fx * p.x() / p.z() + k.cx;
    double w = k.fy * p.y() / p.z() + k.cy;
    umin = std::min(umin, u);
    umax = std::max(umax, u);
    vmin = std::min(vmin, w);
    vmax = std::max(vmax, w);
  }
  if (!(umax >= umin) || !(vmax >= vmin))
    throw Error(ErrorCode::OutOfView, "object projects to an empty bbox");

  double side = std::max({umax - umin, vmax - vmin, 1.0}) * pad;
  double cu = 0.5 * (umin + umax);
  double cv = 0.5 * (vmin + vmax);
  double u0 = cu - 0.5 * side;
  double v0 = cv - 0.5 * side;

  Intrinsics out;
  const double scale = out_size / side;
  out.fx = k.fx * scale;
  out.fy = k.fy * scale;
  out.cx = (k.cx - u0) * scale;
  out.cy = (k.cy - v0) * scale;
  out.width = out_size;
  out.height = out_size;
  return out;
}

double sample_depth_bilinear(const DepthMap& depth, double u, double v) {
  // continuous (u, v) -> pixel-center lattice
  double x = u - 0.5, y = v - 0.5;
  int c0 = static_cast<int>(std::floor(x));
  int r0 = static_cast<int>(std::floor(y));
  double fx = x - c0, fy = y - r0;
  double wsum = 0, zsum = 0;
  for (int dr = 0; dr <= 1; ++dr) {
    for (int dc = 0; dc <= 1; ++dc) {
      int r = r0 + dr, c = c0 + dc;
      if (!depth.in_bounds(r, c)) continue;
      double z = depth.at(r, c);
      if (z <= 0) continue;
      double w = (dr == 0 ? 1 - fy : fy) * (dc == 0 ? 1 - fx : fx);
      wsum += w;
      zsum += w * z;
    }
  }
  if (wsum < 0.5) return 0;
  return zsum / wsum;
}

void resample_view(const GrayImage& gray, const DepthMap& depth, const Intrinsics& k_src,
                   const Intrinsics& k_dst, GrayImage& gray_out, DepthMap& depth_out) {
  gray_out = GrayImage(k_dst.height, k_dst.width, 0.0);
  depth_out = DepthMap(k_dst.height, k_dst.width, 0.0);

  auto sample_gray = [&](double u, double v) {
    double x = std::clamp(u - 0.5, 0.0, gray.cols() - 1.0);
    double y = std::clamp(v - 0.5, 0.0, gray.rows() - 1.0);
    int c0 = std::min(static_cast<int>(x), gray.cols() - 2 >= 0 ? gray.cols() - 2 : 0);
    int r0 = std::min(static_cast<int>(y), gray.rows() - 2 >= 0 ? gray.rows() - 2 : 0);
    double fx = x - c0, fy = y - r0;
    int c1 = std::min(c0 + 1, gray.cols() - 1);
    int r1 = std::min(r0 + 1, gray.rows() - 1);
    return (1 - fy) * ((1 - fx) * gray.at(r0, c0) + fx * gray.at(r0, c1)) +
           fy * ((1 - fx) * gray.at(r1, c0) + fx * gray.at(r1, c1));
  };

  for (int r = 0; r < k_dst.height; ++r) {
    for (int c = 0; c < k_dst.width; ++c) {
      // same viewing ray: (u - cx)/fx is shared between the two cameras
      double u = (c + 0.5 - k_dst.cx) * k_src.fx / k_dst.fx + k_src.cx;
      double v = (r + 0.5 - k_dst.cy) * k_src.fy / k_dst.fy + k_src.cy;
      if (u < 0 || u > k_src.width || v < 0 || v > k_src.height) continue;
      gray_out.at(r, c) = sample_gray(u, v);
      depth_out.at(r, c) = sample_depth_bilinear(depth, u, v);
    }
  }
}

PointCloud grid_cloud(const DepthMap& depth, const Intrinsics& k, int factor) {
  PointCloud pc;
  pc.rows = depth.rows() / factor;
  pc.cols = depth.cols() / factor;
  pc.points.assign(static_cast<size_t>(pc.rows) * pc.cols, Eigen::Vector3d::Zero());
  pc.valid.assign(static_cast<size_t>(pc.rows) * pc.cols, 0);
  const double half = factor * 0.5;
  // anchors interpolate between pixels; reject anchors whose support is
  // incomplete or spans a depth discontinuity (phantom mid-air points)
  constexpr double kEdgeMm = 15.0;
  for (int i = 0; i < pc.rows; ++i) {
    for (int j = 0; j < pc.cols; ++j) {
      double u = factor * j + half;
      double v = factor * i + half;
      double x = u - 0.5, y = v - 0.5;
      int c0 = static_cast<int>(std::floor(x));
      int r0 = static_cast<int>(std::floor(y));
      double fx = x - c0, fy = y - r0;
      double wsum = 0, zsum = 0, zmin = 1e30, zmax = -1e30;
      for (int dr = 0; dr <= 1; ++dr) {
        for (int dc = 0; dc <= 1; ++dc) {
          int r = r0 + dr, c = c0 + dc;
          if (!depth.in_bounds(r, c)) continue;
          double z = depth.at(r, c);
          if (z <= 0) continue;
          double w = (dr == 0 ? 1 - fy : fy) * (dc == 0 ? 1 - fx : fx);
          wsum += w;
          zsum += w * z;
          zmin = std::min(zmin, z);
          zmax = std::max(zmax, z);
        }
      }
      if (wsum < 0.99 || zmax - zmin > kEdgeMm) continue;
      double z = zsum / wsum;
      size_t idx = static_cast<size_t>(i) * pc.cols + j;
      pc.points[idx] = {(u - k.cx) * z / k.fx, (v - k.cy) * z / k.fy, z};
      pc.valid[idx] = 1;
    }
  }
  return pc;
}

}  // namespace poseflow
