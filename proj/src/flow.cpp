#include "poseflow/flow.hpp"

#include <cstring>
#include <fstream>

namespace poseflow {

FlowField pose_induced_flow(const RenderOutput& render, const Pose& p_render, const Pose& p_target,
                            const Intrinsics& k) {
  const int rows = render.depth.rows(), cols = render.depth.cols();
  FlowField flow(rows, cols);
  const Pose inv = p_render.inverse();
  const Pose rel = compose(p_target, inv);  // camera(render) -> camera(target)
  for (int r = 0; r < rows; ++r) {
    const double v = r + 0.5;
    for (int c = 0; c < cols; ++c) {
      if (!render.mask.at(r, c)) continue;
      const double z = render.depth.at(r, c);
      const double u = c + 0.5;
      Eigen::Vector3d xc((u - k.cx) * z / k.fx, (v - k.cy) * z / k.fy, z);
      Eigen::Vector3d xt = rel.apply(xc);
      size_t i = flow.idx(r, c);
      if (xt.z() <= 0) {
        // behind the camera after warping: keep zero value, stay invalid
        continue;
      }
      double ut = k.fx * xt.x() / xt.z() + k.cx;
      double vt = k.fy * xt.y() / xt.z() + k.cy;
      flow.du[i] = ut - u;
      flow.dv[i] = vt - v;
      flow.dz[i] = xt.z() - z;
      bool inside = ut >= 0 && ut <= k.width && vt >= 0 && vt <= k.height;
      flow.valid.at(r, c) = inside ? 1 : 0;
    }
  }
  return flow;
}

FlowField gt_flow(const RenderOutput& render, const Pose& p_render, const Pose& p_gt,
                  const Intrinsics& k) {
  return pose_induced_flow(render, p_render, p_gt, k);
}

DenseSE3Field field_from_residual(const Pose& residual, const Mask& mask) {
  DenseSE3Field field(mask.rows(), mask.cols());
  for (int r = 0; r < mask.rows(); ++r) {
    for (int c = 0; c < mask.cols(); ++c) {
      if (!mask.at(r, c)) continue;
      field.cells[field.idx(r, c)] = residual;
      field.valid.at(r, c) = 1;
    }
  }
  return field;
}

FlowField field_to_flow(const DenseSE3Field& field, const PointCloud& cloud, const Intrinsics& k) {
  if (field.rows != cloud.rows || field.cols != cloud.cols)
    throw Error(ErrorCode::DimensionMismatch, "field and cloud dimensions differ");
  FlowField flow(field.rows, field.cols);
  for (int r = 0; r < field.rows; ++r) {
    for (int c = 0; c < field.cols; ++c) {
      if (!field.valid.at(r, c) || !cloud.is_valid(r, c)) continue;
      const Eigen::Vector3d& x = cloud.at(r, c);
      Eigen::Vector3d y = field.cells[field.idx(r, c)].apply(x);
      size_t i = flow.idx(r, c);
      if (y.z() <= 0) continue;
      Eigen::Vector3d px = project(x, k);
      double uy = k.fx * y.x() / y.z() + k.cx;
      double vy = k.fy * y.y() / y.z() + k.cy;
      flow.du[i] = uy - px.x();
      flow.dv[i] = vy - px.y();
      flow.dz[i] = y.z() - x.z();
      bool inside = uy >= 0 && uy <= k.width && vy >= 0 && vy <= k.height;
      flow.valid.at(r, c) = inside ? 1 : 0;
    }
  }
  return flow;
}

TwistField field_to_twist(const DenseSE3Field& field) {
  TwistField out(field.rows, field.cols);
  for (size_t i = 0; i < field.cells.size(); ++i) {
    if (!field.valid.raw()[i]) continue;
    try {
      out.cells[i] = log_pose(field.cells[i]);
      out.valid.raw()[i] = 1;
    } catch (const Error&) {
      ++out.near_pi_cells;
    }
  }
  return out;
}

DenseSE3Field twist_to_field(const TwistField& twists) {
  DenseSE3Field out(twists.rows, twists.cols);
  for (size_t i = 0; i < twists.cells.size(); ++i) {
    if (!twists.valid.raw()[i]) continue;
    out.cells[i] = exp_twist(twists.cells[i]);
    out.valid.raw()[i] = 1;
  }
  return out;
}

FlowField downsample_flow(const FlowField& flow, int factor) {
  FlowField out(flow.rows / factor, flow.cols / factor);
  for (int i = 0; i < out.rows; ++i) {
    for (int j = 0; j < out.cols; ++j) {
      double su = 0, sv = 0, sz = 0;
      int n = 0;
      for (int r = i * factor; r < (i + 1) * factor; ++r) {
        for (int c = j * factor; c < (j + 1) * factor; ++c) {
          if (!flow.valid.at(r, c)) continue;
          size_t idx = flow.idx(r, c);
          su += flow.du[idx];
          sv += flow.dv[idx];
          sz += flow.dz[idx];
          ++n;
        }
      }
      if (n == 0) continue;
      size_t o = out.idx(i, j);
      out.du[o] = su / n;
      out.dv[o] = sv / n;
      out.dz[o] = sz / n;
      out.valid.at(i, j) = 1;
    }
  }
  return out;
}

namespace {
constexpr char kFlowMagic[4] = {'S', 'C', 'F', '2'};
}

void save_flow(const std::string& path, const FlowField& flow) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot open " + path + " for writing");
  out.write(kFlowMagic, 4);
  std::uint32_t dims[2] = {static_cast<std::uint32_t>(flow.rows),
                           static_cast<std::uint32_t>(flow.cols)};
  out.write(reinterpret_cast<const char*>(dims), sizeof(dims));
  for (size_t i = 0; i < flow.du.size(); ++i) {
    float rec[3] = {static_cast<float>(flow.du[i]), static_cast<float>(flow.dv[i]),
                    static_cast<float>(flow.dz[i])};
    out.write(reinterpret_cast<const char*>(rec), sizeof(rec));
    char v = static_cast<char>(flow.valid.raw()[i]);
    out.write(&v, 1);
  }
  if (!out) throw Error(ErrorCode::IoError, "write failed for " + path);
}

FlowField load_flow(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::MissingFile, path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kFlowMagic, 4) != 0)
    throw Error(ErrorCode::ParseError, path + ": bad flow magic");
  std::uint32_t dims[2];
  in.read(reinterpret_cast<char*>(dims), sizeof(dims));
  if (!in) throw Error(ErrorCode::ParseError, path + ": truncated header");
  FlowField flow(static_cast<int>(dims[0]), static_cast<int>(dims[1]));
  for (size_t i = 0; i < flow.du.size(); ++i) {
    float rec[3];
    char v;
    in.read(reinterpret_cast<char*>(rec), sizeof(rec));
    in.read(&v, 1);
    if (!in) throw Error(ErrorCode::ParseError, path + ": truncated record");
    flow.du[i] = rec[0];
    flow.dv[i] = rec[1];
    flow.dz[i] = rec[2];
    flow.valid.raw()[i] = static_cast<std::uint8_t>(v);
  }
  return flow;
}

}  // namespace poseflow
