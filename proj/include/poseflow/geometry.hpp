#pragma once

#include <vector>

#include <Eigen/Core>

#include "poseflow/core.hpp"

namespace poseflow {

/// Pinhole camera; focal lengths and principal point in pixels.
struct Intrinsics {
  double fx = 0, fy = 0;
  double cx = 0, cy = 0;
  int width = 0, height = 0;
};

/// Rigid transform: rotation matrix plus translation in millimeters.
/// Maps points as R * x + t.
struct Pose {
  Eigen::Matrix3d R = Eigen::Matrix3d::Identity();
  Eigen::Vector3d t = Eigen::Vector3d::Zero();

  static Pose identity() { return {}; }

  Eigen::Vector3d apply(const Eigen::Vector3d& x) const { return R * x + t; }

  Pose inverse() const {
    Pose p;
    p.R = R.transpose();
    p.t = -(p.R * t);
    return p;
  }
};

/// Frobenius distance of R^T R from the identity.
double orthonormality_drift(const Eigen::Matrix3d& R);

/// Nearest rotation matrix (polar decomposition via SVD, det forced to +1).
Eigen::Matrix3d orthonormalize(const Eigen::Matrix3d& R);

/// a * b; re-orthonormalizes the rotation when drift exceeds 1e-12.
Pose compose(const Pose& a, const Pose& b);

/// Residual dP with dR = R_k * R_0^T and dt = t_k - dR * t_0, so that
/// apply_residual(dP, p0) == pk.
Pose pose_residual(const Pose& p0, const Pose& pk);

/// Left application of a residual: compose(residual, p).
Pose apply_residual(const Pose& residual, const Pose& p);

/// Geodesic rotation distance in radians.
double rotation_angle(const Eigen::Matrix3d& Ra, const Eigen::Matrix3d& Rb);
double rotation_angle_deg(const Eigen::Matrix3d& Ra, const Eigen::Matrix3d& Rb);

/// Continuous 6-dim rotation parameterization: two 3-vectors mapped to a
/// rotation by Gram-Schmidt. Invariant to positive scaling of a1 and to
/// adding multiples of a1 to a2.
struct Rot6D {
  Eigen::Vector3d a1 = Eigen::Vector3d::UnitX();
  Eigen::Vector3d a2 = Eigen::Vector3d::UnitY();
};

/// Throws DegenerateInput when a1 vanishes or a2 is parallel to a1.
Eigen::Matrix3d rot6d_to_matrix(const Rot6D& r);
Rot6D rot6d_from_matrix(const Eigen::Matrix3d& R);  // first two columns

/// Disentangled normalized-translation encoding: focal-scaled projective
/// in-plane offsets plus log depth ratio. Throws InvalidDepth for t_z <= 0.
Eigen::Vector3d encode_translation(const Pose& p_cur, const Pose& p_new, const Intrinsics& k);
Eigen::Vector3d decode_translation(const Pose& p_cur, const Eigen::Vector3d& v, const Intrinsics& k);

/// 9-dim pose residual: 6-dim rotation + 3-dim normalized translation.
struct PoseResidual9 {
  Rot6D rot;
  Eigen::Vector3d vt = Eigen::Vector3d::Zero();
};

PoseResidual9 encode_residual(const Pose& p_cur, const Pose& p_new, const Intrinsics& k);
/// Applies the residual to p_cur: rotation on the left, translation decoded.
Pose decode_residual(const Pose& p_cur, const PoseResidual9& r, const Intrinsics& k);

/// se(3) coordinates: tau translational (mm), theta rotational (axis-angle, rad).
struct Twist {
  Eigen::Vector3d tau = Eigen::Vector3d::Zero();
  Eigen::Vector3d theta = Eigen::Vector3d::Zero();
};

/// Rodrigues exponential; translation through the SE(3) left Jacobian.
Pose exp_twist(const Twist& x);
/// Inverse of exp_twist; throws NearPiRotation at angle >= pi - 1e-6.
Twist log_pose(const Pose& p);

/// Weighted least-squares rigid alignment (dst ~ R * src + t) via SVD with
/// reflection guard. Unit weights when `weights` is empty. Throws
/// DegenerateConfiguration for < 3 points, non-positive weight sum, or a
/// weighted covariance of rank < 2.
Pose kabsch(const std::vector<Eigen::Vector3d>& src,
            const std::vector<Eigen::Vector3d>& dst,
            const std::vector<double>& weights = {});

}  // namespace poseflow
