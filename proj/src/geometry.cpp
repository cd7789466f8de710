#include "poseflow/geometry.hpp"

#include <cmath>

#include <Eigen/Dense>
#include <Eigen/SVD>

namespace poseflow {

namespace {

Eigen::Matrix3d skew(const Eigen::Vector3d& w) {
  Eigen::Matrix3d s;
  s << 0, -w.z(), w.y(), w.z(), 0, -w.x(), -w.y(), w.x(), 0;
  return s;
}

}  // namespace

const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::DegenerateInput: return "DegenerateInput";
    case ErrorCode::InvalidDepth: return "InvalidDepth";
    case ErrorCode::NearPiRotation: return "NearPiRotation";
    case ErrorCode::DegenerateConfiguration: return "DegenerateConfiguration";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::EmptyMesh: return "EmptyMesh";
    case ErrorCode::OutOfView: return "OutOfView";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::TooFewValidPixels: return "TooFewValidPixels";
    case ErrorCode::TooFewCells: return "TooFewCells";
    case ErrorCode::TooFewCorrespondences: return "TooFewCorrespondences";
    case ErrorCode::NoConsensus: return "NoConsensus";
    case ErrorCode::EmptyMask: return "EmptyMask";
    case ErrorCode::EmptyUnion: return "EmptyUnion";
    case ErrorCode::EmptyDataset: return "EmptyDataset";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::MissingFile: return "MissingFile";
    case ErrorCode::MalformedJson: return "MalformedJson";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::IoError: return "IoError";
  }
  return "UnknownError";
}

double orthonormality_drift(const Eigen::Matrix3d& R) {
  return (R.transpose() * R - Eigen::Matrix3d::Identity()).norm();
}

Eigen::Matrix3d orthonormalize(const Eigen::Matrix3d& R) {
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(R, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d u = svd.matrixU();
  Eigen::Matrix3d v = svd.matrixV();
  Eigen::Vector3d s = Eigen::Vector3d::Ones();
  if ((u * v.transpose()).determinant() < 0) s.z() = -1;
  return u * s.asDiagonal() * v.transpose();
}

Pose compose(const Pose& a, const Pose& b) {
  Pose out;
  out.R = a.R * b.R;
  out.t = a.R * b.t + a.t;
  if (orthonormality_drift(out.R) > 1e-12) out.R = orthonormalize(out.R);
  return out;
}

Pose pose_residual(const Pose& p0, const Pose& pk) {
  Pose d;
  d.R = pk.R * p0.R.transpose();
  if (orthonormality_drift(d.R) > 1e-12) d.R = orthonormalize(d.R);
  d.t = pk.t - d.R * p0.t;
  return d;
}

Pose apply_residual(const Pose& residual, const Pose& p) { return compose(residual, p); }

double rotation_angle(const Eigen::Matrix3d& Ra, const Eigen::Matrix3d& Rb) {
  double c = ((Ra * Rb.transpose()).trace() - 1.0) * 0.5;
  return std::acos(std::clamp(c, -1.0, 1.0));
}

double rotation_angle_deg(const Eigen::Matrix3d& Ra, const Eigen::Matrix3d& Rb) {
  return rotation_angle(Ra, Rb) * 180.0 / M_PI;
}

Eigen::Matrix3d rot6d_to_matrix(const Rot6D& r) {
  double n1 = r.a1.norm();
  if (n1 < 1e-12) throw Error(ErrorCode::DegenerateInput, "rot6d a1 is null");
  Eigen::Vector3d b1 = r.a1 / n1;
  Eigen::Vector3d u = r.a2 - b1.dot(r.a2) * b1;
  double n2 = u.norm();
  if (n2 < 1e-12) throw Error(ErrorCode::DegenerateInput, "rot6d a2 parallel to a1");
  Eigen::Vector3d b2 = u / n2;
  Eigen::Matrix3d m;
  m.col(0) = b1;
  m.col(1) = b2;
  m.col(2) = b1.cross(b2);
  return m;
}

Rot6D rot6d_from_matrix(const Eigen::Matrix3d& R) { return {R.col(0), R.col(1)}; }

Eigen::Vector3d encode_translation(const Pose& p_cur, const Pose& p_new, const Intrinsics& k) {
  if (p_cur.t.z() <= 0 || p_new.t.z() <= 0)
    throw Error(ErrorCode::InvalidDepth, "translation depth must be positive");
  const Eigen::Vector3d& t = p_cur.t;
  const Eigen::Vector3d& tn = p_new.t;
  return {k.fx * (tn.x() / tn.z() - t.x() / t.z()),
          k.fy * (tn.y() / tn.z() - t.y() / t.z()),
          std::log(t.z() / tn.z())};
}

Eigen::Vector3d decode_translation(const Pose& p_cur, const Eigen::Vector3d& v, const Intrinsics& k) {
  if (p_cur.t.z() <= 0) throw Error(ErrorCode::InvalidDepth, "current depth must be positive");
  const Eigen::Vector3d& t = p_cur.t;
  double tz = t.z() * std::exp(-v.z());
  return {(v.x() / k.fx + t.x() / t.z()) * tz, (v.y() / k.fy + t.y() / t.z()) * tz, tz};
}

PoseResidual9 encode_residual(const Pose& p_cur, const Pose& p_new, const Intrinsics& k) {
  PoseResidual9 r;
  r.rot = rot6d_from_matrix(p_new.R * p_cur.R.transpose());
  r.vt = encode_translation(p_cur, p_new, k);
  return r;
}

Pose decode_residual(const Pose& p_cur, const PoseResidual9& r, const Intrinsics& k) {
  Pose p;
  p.R = rot6d_to_matrix(r.rot) * p_cur.R;
  if (orthonormality_drift(p.R) > 1e-12) p.R = orthonormalize(p.R);
  p.t = decode_translation(p_cur, r.vt, k);
  return p;
}

Pose exp_twist(const Twist& x) {
  double angle = x.theta.norm();
  Eigen::Matrix3d w = skew(x.theta);
  Eigen::Matrix3d w2 = w * w;
  double a, b, c;  // R = I + a*w + b*w2, V = I + b*w + c*w2
  if (angle < 1e-8) {
    a = 1.0 - angle * angle / 6.0;
    b = 0.5 - angle * angle / 24.0;
    c = 1.0 / 6.0 - angle * angle / 120.0;
  } else {
    double a2 = angle * angle;
    a = std::sin(angle) / angle;
    b = (1.0 - std::cos(angle)) / a2;
    c = (angle - std::sin(angle)) / (a2 * angle);
  }
  Pose p;
  p.R = Eigen::Matrix3d::Identity() + a * w + b * w2;
  if (orthonormality_drift(p.R) > 1e-12) p.R = orthonormalize(p.R);
  Eigen::Matrix3d V = Eigen::Matrix3d::Identity() + b * w + c * w2;
  p.t = V * x.tau;
  return p;
}

Twist log_pose(const Pose& p) {
  double cos_angle = std::clamp((p.R.trace() - 1.0) * 0.5, -1.0, 1.0);
  double angle = std::acos(cos_angle);
  if (angle >= M_PI - 1e-6)
    throw Error(ErrorCode::NearPiRotation, "rotation angle too close to pi for log map");

  Twist x;
  if (angle < 1e-8) {
    // theta ~ vee(R - R^T)/2, V^-1 ~ I - w/2
    x.theta = 0.5 * Eigen::Vector3d(p.R(2, 1) - p.R(1, 2), p.R(0, 2) - p.R(2, 0),
                                    p.R(1, 0) - p.R(0, 1));
    x.tau = (Eigen::Matrix3d::Identity() - 0.5 * skew(x.theta)) * p.t;
    return x;
  }
  double s = std::sin(angle);
  Eigen::Vector3d axis = Eigen::Vector3d(p.R(2, 1) - p.R(1, 2), p.R(0, 2) - p.R(2, 0),
                                         p.R(1, 0) - p.R(0, 1)) /
                         (2.0 * s);
  x.theta = angle * axis;
  Eigen::Matrix3d w = skew(x.theta);
  double a2 = angle * angle;
  Eigen::Matrix3d vinv = Eigen::Matrix3d::Identity() - 0.5 * w +
                         (1.0 / a2 - (1.0 + std::cos(angle)) / (2.0 * angle * s)) * w * w;
  x.tau = vinv * p.t;
  return x;
}

Pose kabsch(const std::vector<Eigen::Vector3d>& src, const std::vector<Eigen::Vector3d>& dst,
            const std::vector<double>& weights) {
  if (src.size() != dst.size())
    throw Error(ErrorCode::DegenerateConfiguration, "point sets differ in length");
  if (!weights.empty() && weights.size() != src.size())
    throw Error(ErrorCode::DegenerateConfiguration, "weights length mismatch");
  if (src.size() < 3)
    throw Error(ErrorCode::DegenerateConfiguration, "need at least 3 points");

  const size_t n = src.size();
  double wsum = 0;
  Eigen::Vector3d cs = Eigen::Vector3d::Zero();
  Eigen::Vector3d cd = Eigen::Vector3d::Zero();
  for (size_t i = 0; i < n; ++i) {
    double w = weights.empty() ? 1.0 : weights[i];
    wsum += w;
    cs += w * src[i];
    cd += w * dst[i];
  }
  if (wsum <= 0) throw Error(ErrorCode::DegenerateConfiguration, "weight sum not positive");
  cs /= wsum;
  cd /= wsum;

  Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
  for (size_t i = 0; i < n; ++i) {
    double w = weights.empty() ? 1.0 : weights[i];
    cov += w * (dst[i] - cd) * (src[i] - cs).transpose();
  }
  cov /= wsum;

  Eigen::JacobiSVD<Eigen::Matrix3d> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Vector3d sv = svd.singularValues();
  if (sv(0) <= 0 || sv(1) < 1e-9 * sv(0))
    throw Error(ErrorCode::DegenerateConfiguration, "weighted covariance rank < 2");

  Eigen::Matrix3d u = svd.matrixU();
  Eigen::Matrix3d v = svd.matrixV();
  Eigen::Vector3d sign = Eigen::Vector3d::Ones();
  if ((u * v.transpose()).determinant() < 0) sign.z() = -1;  // flip smallest singular direction

  Pose p;
  p.R = u * sign.asDiagonal() * v.transpose();
  if (orthonormality_drift(p.R) > 1e-12) p.R = orthonormalize(p.R);
  p.t = cd - p.R * cs;
  return p;
}

}  // namespace poseflow
