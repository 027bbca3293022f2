#pragma once

#include <algorithm>
#include <cmath>

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <Eigen/SVD>

#include "dlo/error.hpp"

namespace dlo {

using Vector6d = Eigen::Matrix<double, 6, 1>;

/// se(3) tangent vector stored as (rho, omega): translation part first, then
/// rotation. The same order is used for Jacobian columns everywhere.
struct Twist {
  Vector6d xi = Vector6d::Zero();

  Twist() = default;
  explicit Twist(const Vector6d& v) : xi(v) {}
  Twist(const Eigen::Vector3d& rho, const Eigen::Vector3d& omega) {
    xi << rho, omega;
  }

  Eigen::Vector3d rho() const { return xi.head<3>(); }
  Eigen::Vector3d omega() const { return xi.tail<3>(); }
};

inline Eigen::Matrix3d hat(const Eigen::Vector3d& v) {
  Eigen::Matrix3d m;
  m << 0.0, -v.z(), v.y(),
       v.z(), 0.0, -v.x(),
       -v.y(), v.x(), 0.0;
  return m;
}

inline Eigen::Matrix4d hat(const Twist& twist) {
  Eigen::Matrix4d m = Eigen::Matrix4d::Zero();
  m.topLeftCorner<3, 3>() = hat(twist.omega());
  m.topRightCorner<3, 1>() = twist.rho();
  return m;
}

/// Rigid transform x -> R x + t.
struct Pose {
  Eigen::Matrix3d R = Eigen::Matrix3d::Identity();
  Eigen::Vector3d t = Eigen::Vector3d::Zero();

  static Pose identity() { return {}; }

  Eigen::Vector3d operator*(const Eigen::Vector3d& p) const { return R * p + t; }

  Pose inverse() const {
    Pose inv;
    inv.R = R.transpose();
    inv.t = -(inv.R * t);
    return inv;
  }

  Eigen::Matrix4d matrix() const {
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    m.topLeftCorner<3, 3>() = R;
    m.topRightCorner<3, 1>() = t;
    return m;
  }

  double rotation_angle() const {
    const double c = std::clamp((R.trace() - 1.0) * 0.5, -1.0, 1.0);
    const Eigen::Vector3d s(R(2, 1) - R(1, 2), R(0, 2) - R(2, 0), R(1, 0) - R(0, 1));
    return std::atan2(0.5 * s.norm(), c);
  }
};

inline Pose exp_map(const Twist& twist) {
  const Eigen::Vector3d omega = twist.omega();
  const double theta2 = omega.squaredNorm();
  const double theta = std::sqrt(theta2);
  // R = I + a W + b W^2 and the left Jacobian V = I + b W + c W^2.
  double a, b, c;
  if (theta < 1e-8) {
    a = 1.0 - theta2 / 6.0;
    b = 0.5 - theta2 / 24.0;
    c = 1.0 / 6.0 - theta2 / 120.0;
  } else {
    a = std::sin(theta) / theta;
    const double half_sin = std::sin(0.5 * theta);
    b = 2.0 * half_sin * half_sin / theta2;
    c = (theta - std::sin(theta)) / (theta2 * theta);
  }
  const Eigen::Matrix3d W = hat(omega);
  const Eigen::Matrix3d W2 = W * W;
  Pose pose;
  pose.R = Eigen::Matrix3d::Identity() + a * W + b * W2;
  pose.t = (Eigen::Matrix3d::Identity() + b * W + c * W2) * twist.rho();
  return pose;
}

/// Inverse of exp_map. Throws NearPiRotation when the rotation angle is
/// within 1e-6 of pi, where the axis is not recoverable from R - R^T.
inline Twist log_map(const Pose& pose) {
  const Eigen::Matrix3d& R = pose.R;
  const Eigen::Vector3d s =
      0.5 * Eigen::Vector3d(R(2, 1) - R(1, 2), R(0, 2) - R(2, 0), R(1, 0) - R(0, 1));
  const double cos_theta = std::clamp((R.trace() - 1.0) * 0.5, -1.0, 1.0);
  const double sin_theta = s.norm();
  const double theta = std::atan2(sin_theta, cos_theta);
  if (theta > M_PI - 1e-6)
    throw Error(ErrorCode::kNearPiRotation, "rotation angle too close to pi for log_map");

  const double theta2 = theta * theta;
  const double scale = theta < 1e-8 ? 1.0 + theta2 / 6.0 : theta / sin_theta;
  const Eigen::Vector3d omega = scale * s;

  // V^{-1} = I - W/2 + d W^2
  double d;
  if (theta < 1e-4) {
    d = 1.0 / 12.0 + theta2 / 720.0;
  } else {
    const double half_sin = std::sin(0.5 * theta);
    d = (1.0 - theta * std::sin(theta) / (4.0 * half_sin * half_sin)) / theta2;
  }
  const Eigen::Matrix3d W = hat(omega);
  const Eigen::Vector3d rho =
      (Eigen::Matrix3d::Identity() - 0.5 * W + d * W * W) * pose.t;
  return {rho, omega};
}

/// Projects a near-rotation onto SO(3) through the polar decomposition.
inline Eigen::Matrix3d orthonormalize(const Eigen::Matrix3d& R) {
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(R, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d out = svd.matrixU() * svd.matrixV().transpose();
  if (out.determinant() < 0.0) {
    Eigen::Matrix3d U = svd.matrixU();
    U.col(2) *= -1.0;
    out = U * svd.matrixV().transpose();
  }
  return out;
}

inline Pose compose(const Pose& a, const Pose& b) {
  Pose out;
  out.R = a.R * b.R;
  out.t = a.R * b.t + a.t;
  if ((out.R.transpose() * out.R - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() > 1e-12)
    out.R = orthonormalize(out.R);
  return out;
}

inline Pose operator*(const Pose& a, const Pose& b) { return compose(a, b); }

/// Wraps to [-pi, pi).
inline double wrap_angle(double angle) {
  double wrapped = std::remainder(angle, 2.0 * M_PI);
  if (wrapped >= M_PI) wrapped -= 2.0 * M_PI;
  return wrapped;
}

struct PlanarPose {
  double x = 0.0;
  double y = 0.0;
  double yaw = 0.0;
};

inline Pose planar_embed(const PlanarPose& p) {
  Pose pose;
  pose.R = Eigen::AngleAxisd(p.yaw, Eigen::Vector3d::UnitZ()).toRotationMatrix();
  pose.t = Eigen::Vector3d(p.x, p.y, 0.0);
  return pose;
}

inline PlanarPose planar_project(const Pose& pose) {
  return {pose.t.x(), pose.t.y(), wrap_angle(std::atan2(pose.R(1, 0), pose.R(0, 0)))};
}

}  // namespace dlo
