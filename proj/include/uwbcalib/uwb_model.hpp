#pragma once

#include <Eigen/Core>

#include <cstdint>

#include "uwbcalib/random.hpp"
#include "uwbcalib/so3.hpp"
#include "uwbcalib/state.hpp"

namespace uwbcalib {

// Rigid offset of the ranging tag in the body frame.
struct TagExtrinsics {
  Eigen::Vector3d p_tag_body = Eigen::Vector3d::Zero();
};

struct RangingMeasurement {
  double timestamp = 0.0;
  int anchor_id = 0;
  double range = 0.0;
};

// Partial derivatives of the biased range w.r.t. the error state, all rows
// of a single 1xN measurement Jacobian. Pose columns follow the attitude
// error convention documented in so3.hpp.
struct RangeJacobians {
  Eigen::RowVector3d d_theta = Eigen::RowVector3d::Zero();
  Eigen::RowVector3d d_pos = Eigen::RowVector3d::Zero();
  Eigen::RowVector3d d_anchor_pos = Eigen::RowVector3d::Zero();
  double d_beta = 0.0;
  double d_gamma = 0.0;
};

// Tag position in the global frame for a given body pose.
Eigen::Vector3d tag_position(const Rotation3& attitude, const Eigen::Vector3d& position,
                             const TagExtrinsics& tag);

// Measurement model d = beta * ||p + C p_T - p_a|| + gamma.
double predict_range(const Rotation3& attitude, const Eigen::Vector3d& position,
                     const TagExtrinsics& tag, const UwbState& anchor);

// Jacobians of predict_range at the given linearization point. Throws
// std::domain_error when the tag sits on the anchor (distance < 1e-9),
// where the direction vector is undefined.
RangeJacobians range_jacobians(const Rotation3& attitude, const Eigen::Vector3d& position,
                               const TagExtrinsics& tag, const UwbState& anchor);

// Generates a measurement from ground truth: the additive noise enters the
// time-of-flight distance before the scale bias, d = beta * (||.|| + n) + gamma.
double simulate_range(const Rotation3& attitude, const Eigen::Vector3d& position,
                      const TagExtrinsics& tag, const UwbState& anchor, double range_noise_std,
                      RandomStream& rng);

}  // namespace uwbcalib
