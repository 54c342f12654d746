#pragma once

#include <Eigen/Core>

#include <map>
#include <vector>

#include "uwbcalib/covariance.hpp"
#include "uwbcalib/so3.hpp"
#include "uwbcalib/state.hpp"

namespace uwbcalib {

inline const Eigen::Vector3d kGravity(0.0, 0.0, -9.81);

struct ImuSample {
  Eigen::Vector3d omega = Eigen::Vector3d::Zero();
  Eigen::Vector3d accel = Eigen::Vector3d::Zero();
  double timestamp = 0.0;
};

// Continuous-time noise densities of the IMU error model. Discrete process
// noise over an interval dt scales as std^2 * dt.
struct ImuNoiseParams {
  double gyro_noise_std = 1.7e-3;       // rad/s/sqrt(Hz)
  double gyro_bias_walk_std = 2.0e-5;   // rad/s^2/sqrt(Hz)
  double accel_noise_std = 2.0e-2;      // m/s^2/sqrt(Hz)
  double accel_bias_walk_std = 3.0e-4;  // m/s^3/sqrt(Hz)
};

struct LandmarkObservation {
  int landmark_id = 0;
  Eigen::Vector2d uv = Eigen::Vector2d::Zero();
  double timestamp = 0.0;
};

// Camera mounting: {}^C_I R maps IMU-frame vectors into the camera frame,
// p_imu_in_cam is the IMU origin expressed in the camera frame.
struct CameraExtrinsics {
  Rotation3 rot_imu_to_cam;
  Eigen::Vector3d p_imu_in_cam = Eigen::Vector3d::Zero();
};

using LandmarkMap = std::map<int, Eigen::Vector3d>;

// Strapdown mean propagation over one interval: attitude by the exponential
// of the bias-corrected rate, velocity by the gravity-compensated trapezoid
// of the rotated specific force, position by the trapezoid of velocity.
void propagate_mean(RobotState& state, const ImuSample& sample, double dt);

// First-order state transition matrix of propagate_mean in the error state
// (theta, bg, v, ba, p), evaluated before the mean moves.
Eigen::Matrix<double, 15, 15> propagation_jacobian(const RobotState& state, const ImuSample& sample,
                                                   double dt);

// Mean and covariance propagation. Only the IMU-involved blocks move:
// P_II <- Phi P_II Phi^T + Q, P_IC <- Phi P_IC, P_IU <- Phi P_IU; the
// clone/anchor blocks are left untouched.
void propagate(RobotState& state, BlockCovariance& cov, const ImuSample& sample, double dt,
               const ImuNoiseParams& noise);

// Pinhole projection of a global-frame landmark into normalized image
// coordinates (x/z, y/z) of the camera attached to the given body pose.
// Throws std::domain_error when the transformed depth is below 1e-6.
Eigen::Vector2d project(const Eigen::Vector3d& landmark_global, const Rotation3& attitude,
                        const Eigen::Vector3d& position, const CameraExtrinsics& ext);

// Jacobian of project w.r.t. the pose error (dtheta, dpos) of the observing
// body pose.
Eigen::Matrix<double, 2, 6> project_pose_jacobian(const Eigen::Vector3d& landmark_global,
                                                  const Rotation3& attitude,
                                                  const Eigen::Vector3d& position,
                                                  const CameraExtrinsics& ext);

struct VisionUpdateReport {
  int used = 0;
  int gated = 0;
  double stacked_residual_norm = 0.0;
};

// Stacked EKF update from landmark observations of the window clones. Each
// observation is chi-square gated at 0.999 in dimension 2 before stacking.
// The robot/clone blocks are updated with gains computed purely from
// robot-block products, so runs with and without an appended anchor block
// produce bit-identical robot-side results; anchor mean and cross blocks
// receive the matching full-state EKF correction.
// Throws std::runtime_error when every observation fails the gate.
VisionUpdateReport vision_update(FilterState& state, BlockCovariance& cov,
                                 const std::vector<LandmarkObservation>& observations,
                                 const LandmarkMap& landmarks, const CameraExtrinsics& ext,
                                 double pixel_noise_std);

}  // namespace uwbcalib
