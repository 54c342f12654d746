#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cmath>

namespace uwbcalib {

// Attitude convention used across the library:
//   - Rotation3 stores the body-to-global rotation C = {}^G_I R as a Hamilton
//     unit quaternion, so a vector expressed in the IMU frame maps to the
//     global frame as v_G = C * v_I.
//   - The 3-dof attitude error delta_theta is defined by the left-multiplicative
//     retraction C = Exp(delta_theta) * C_hat. Every Jacobian, state transition
//     matrix and update in the library uses this definition.

inline Eigen::Matrix3d skew(const Eigen::Vector3d& v) {
  Eigen::Matrix3d s;
  s << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
  return s;
}

// Matrix exponential of skew(theta). Taylor fallback below 1e-8 rad.
inline Eigen::Matrix3d exp_so3(const Eigen::Vector3d& theta) {
  const double angle = theta.norm();
  const Eigen::Matrix3d s = skew(theta);
  if (angle < 1e-8) {
    return Eigen::Matrix3d::Identity() + s + 0.5 * s * s;
  }
  const double a = std::sin(angle) / angle;
  const double b = (1.0 - std::cos(angle)) / (angle * angle);
  return Eigen::Matrix3d::Identity() + a * s + b * s * s;
}

// Inverse of exp_so3, returning the rotation vector with angle in [0, pi].
// Goes through the quaternion so the axis stays well conditioned near pi,
// where extracting it from R - R^T breaks down.
inline Eigen::Vector3d log_so3(const Eigen::Matrix3d& rot) {
  Eigen::Quaterniond q(rot);
  if (q.w() < 0.0) q.coeffs() *= -1.0;
  const double vec_norm = q.vec().norm();
  if (vec_norm < 1e-12) {
    return 2.0 * q.vec();
  }
  const double angle = 2.0 * std::atan2(vec_norm, q.w());
  return (angle / vec_norm) * q.vec();
}

// Left Jacobian of SO(3): Exp(theta + d) ~= Exp(Jl(theta) d) Exp(theta).
inline Eigen::Matrix3d left_jacobian_so3(const Eigen::Vector3d& theta) {
  const double angle = theta.norm();
  const Eigen::Matrix3d s = skew(theta);
  if (angle < 1e-8) {
    return Eigen::Matrix3d::Identity() + 0.5 * s + s * s / 6.0;
  }
  const double a2 = angle * angle;
  const double b = (1.0 - std::cos(angle)) / a2;
  const double c = (angle - std::sin(angle)) / (a2 * angle);
  return Eigen::Matrix3d::Identity() + b * s + c * s * s;
}

// Right Jacobian: Exp(theta + d) ~= Exp(theta) Exp(Jr(theta) d).
inline Eigen::Matrix3d right_jacobian_so3(const Eigen::Vector3d& theta) {
  return left_jacobian_so3(-theta);
}

// Body-to-global attitude as a unit quaternion, renormalized after every
// operation so the norm-1 invariant holds to 1e-9.
class Rotation3 {
 public:
  Rotation3() : q_(Eigen::Quaterniond::Identity()) {}

  explicit Rotation3(const Eigen::Quaterniond& q_body_to_global) : q_(q_body_to_global.normalized()) {}

  static Rotation3 identity() { return Rotation3(); }

  static Rotation3 from_matrix(const Eigen::Matrix3d& body_to_global) {
    return Rotation3(Eigen::Quaterniond(body_to_global));
  }

  static Rotation3 exp(const Eigen::Vector3d& theta) { return Rotation3::from_matrix(exp_so3(theta)); }

  // C: maps body-frame vectors into the global frame.
  Eigen::Matrix3d matrix() const { return q_.toRotationMatrix(); }

  // {}^I_G R = C^T: maps global-frame vectors into the body frame.
  Eigen::Matrix3d matrix_global_to_body() const { return q_.toRotationMatrix().transpose(); }

  const Eigen::Quaterniond& quaternion() const { return q_; }

  Eigen::Vector3d rotate(const Eigen::Vector3d& v_body) const { return q_ * v_body; }

  // Retraction C <- Exp(delta_theta) * C.
  Rotation3 boxplus(const Eigen::Vector3d& delta_theta) const {
    Eigen::Quaterniond dq(Eigen::AngleAxisd(delta_theta.norm(), delta_theta.norm() < 1e-16
                                                                    ? Eigen::Vector3d::UnitX()
                                                                    : delta_theta.normalized()));
    return Rotation3(dq * q_);
  }

  // Inverse retraction: Log(C * C_hat^T), so boxminus(boxplus(d)) == d.
  Eigen::Vector3d boxminus(const Rotation3& other) const {
    return log_so3(matrix() * other.matrix().transpose());
  }

  // Geodesic distance in radians.
  double angle_to(const Rotation3& other) const { return boxminus(other).norm(); }

  Rotation3 compose(const Rotation3& rhs) const { return Rotation3(q_ * rhs.q_); }

 private:
  Eigen::Quaterniond q_;
};

}  // namespace uwbcalib
