#pragma once

#include <Eigen/Core>

#include <stdexcept>
#include <vector>

#include "uwbcalib/so3.hpp"

namespace uwbcalib {

inline constexpr int kImuErrDim = 15;   // (dtheta, db_g, dv, db_a, dp)
inline constexpr int kCloneErrDim = 6;  // (dtheta, dp)
inline constexpr int kUwbErrDim = 5;    // (dp_a, dbeta, dgamma)

// Error-state column offsets inside the 15-dof IMU block.
inline constexpr int kIdxTheta = 0;
inline constexpr int kIdxBg = 3;
inline constexpr int kIdxVel = 6;
inline constexpr int kIdxBa = 9;
inline constexpr int kIdxPos = 12;

struct PoseClone {
  Rotation3 attitude;
  Eigen::Vector3d position = Eigen::Vector3d::Zero();
  double timestamp = 0.0;
};

// IMU-centric navigation state plus the sliding window of pose clones.
struct RobotState {
  Rotation3 attitude;
  Eigen::Vector3d gyro_bias = Eigen::Vector3d::Zero();
  Eigen::Vector3d velocity = Eigen::Vector3d::Zero();
  Eigen::Vector3d accel_bias = Eigen::Vector3d::Zero();
  Eigen::Vector3d position = Eigen::Vector3d::Zero();
  std::vector<PoseClone> clones;

  int error_dim() const { return kImuErrDim + kCloneErrDim * static_cast<int>(clones.size()); }

  // x <- x boxplus delta over (imu | clones).
  void boxplus(const Eigen::VectorXd& delta) {
    if (delta.size() != error_dim()) {
      throw std::invalid_argument("RobotState::boxplus: delta dimension mismatch");
    }
    attitude = attitude.boxplus(delta.segment<3>(kIdxTheta));
    gyro_bias += delta.segment<3>(kIdxBg);
    velocity += delta.segment<3>(kIdxVel);
    accel_bias += delta.segment<3>(kIdxBa);
    position += delta.segment<3>(kIdxPos);
    for (size_t i = 0; i < clones.size(); ++i) {
      const int off = kImuErrDim + kCloneErrDim * static_cast<int>(i);
      clones[i].attitude = clones[i].attitude.boxplus(delta.segment<3>(off));
      clones[i].position += delta.segment<3>(off + 3);
    }
  }

  // delta = this boxminus other, inverse of boxplus on `other`.
  Eigen::VectorXd boxminus(const RobotState& other) const {
    if (clones.size() != other.clones.size()) {
      throw std::invalid_argument("RobotState::boxminus: clone count mismatch");
    }
    Eigen::VectorXd delta(error_dim());
    delta.segment<3>(kIdxTheta) = attitude.boxminus(other.attitude);
    delta.segment<3>(kIdxBg) = gyro_bias - other.gyro_bias;
    delta.segment<3>(kIdxVel) = velocity - other.velocity;
    delta.segment<3>(kIdxBa) = accel_bias - other.accel_bias;
    delta.segment<3>(kIdxPos) = position - other.position;
    for (size_t i = 0; i < clones.size(); ++i) {
      const int off = kImuErrDim + kCloneErrDim * static_cast<int>(i);
      delta.segment<3>(off) = clones[i].attitude.boxminus(other.clones[i].attitude);
      delta.segment<3>(off + 3) = clones[i].position - other.clones[i].position;
    }
    return delta;
  }
};

// Per-anchor calibration target: position plus the (beta, gamma) bias pair.
struct UwbState {
  Eigen::Vector3d position = Eigen::Vector3d::Zero();
  double beta = 1.0;
  double gamma = 0.0;

  void boxplus(const Eigen::Matrix<double, kUwbErrDim, 1>& delta) {
    position += delta.head<3>();
    beta += delta(3);
    gamma += delta(4);
  }

  Eigen::Matrix<double, kUwbErrDim, 1> boxminus(const UwbState& other) const {
    Eigen::Matrix<double, kUwbErrDim, 1> delta;
    delta.head<3>() = position - other.position;
    delta(3) = beta - other.beta;
    delta(4) = gamma - other.gamma;
    return delta;
  }
};

// Joint state over (robot | anchors), ordered like the covariance blocks.
struct FilterState {
  RobotState robot;
  std::vector<UwbState> anchors;

  int error_dim() const { return robot.error_dim() + kUwbErrDim * static_cast<int>(anchors.size()); }

  void boxplus(const Eigen::VectorXd& delta) {
    if (delta.size() != error_dim()) {
      throw std::invalid_argument("FilterState::boxplus: delta dimension mismatch");
    }
    robot.boxplus(delta.head(robot.error_dim()));
    for (size_t i = 0; i < anchors.size(); ++i) {
      const int off = robot.error_dim() + kUwbErrDim * static_cast<int>(i);
      anchors[i].boxplus(delta.segment<kUwbErrDim>(off));
    }
  }

  Eigen::VectorXd boxminus(const FilterState& other) const {
    if (anchors.size() != other.anchors.size()) {
      throw std::invalid_argument("FilterState::boxminus: anchor count mismatch");
    }
    Eigen::VectorXd delta(error_dim());
    delta.head(robot.error_dim()) = robot.boxminus(other.robot);
    for (size_t i = 0; i < anchors.size(); ++i) {
      const int off = robot.error_dim() + kUwbErrDim * static_cast<int>(i);
      delta.segment<kUwbErrDim>(off) = anchors[i].boxminus(other.anchors[i]);
    }
    return delta;
  }
};

}  // namespace uwbcalib
