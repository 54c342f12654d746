#include "uwbcalib/uwb_model.hpp"

#include <stdexcept>

namespace uwbcalib {

Eigen::Vector3d tag_position(const Rotation3& attitude, const Eigen::Vector3d& position,
                             const TagExtrinsics& tag) {
  return position + attitude.rotate(tag.p_tag_body);
}

double predict_range(const Rotation3& attitude, const Eigen::Vector3d& position,
                     const TagExtrinsics& tag, const UwbState& anchor) {
  const double dist = (tag_position(attitude, position, tag) - anchor.position).norm();
  return anchor.beta * dist + anchor.gamma;
}

RangeJacobians range_jacobians(const Rotation3& attitude, const Eigen::Vector3d& position,
                               const TagExtrinsics& tag, const UwbState& anchor) {
  const Eigen::Vector3d lever = attitude.rotate(tag.p_tag_body);
  const Eigen::Vector3d delta = position + lever - anchor.position;
  const double dist = delta.norm();
  if (dist < 1e-9) {
    throw std::domain_error("range_jacobians: tag coincides with anchor");
  }
  const Eigen::RowVector3d u = delta.transpose() / dist;

  RangeJacobians jac;
  jac.d_pos = anchor.beta * u;
  // Attitude enters through the lever arm: d(C p_T) = -[C p_T]x dtheta.
  jac.d_theta = -anchor.beta * u * skew(lever);
  jac.d_anchor_pos = -anchor.beta * u;
  jac.d_beta = dist;
  jac.d_gamma = 1.0;
  return jac;
}

double simulate_range(const Rotation3& attitude, const Eigen::Vector3d& position,
                      const TagExtrinsics& tag, const UwbState& anchor, double range_noise_std,
                      RandomStream& rng) {
  const double dist = (tag_position(attitude, position, tag) - anchor.position).norm();
  return anchor.beta * (dist + rng.gaussian(0.0, range_noise_std)) + anchor.gamma;
}

}  // namespace uwbcalib
