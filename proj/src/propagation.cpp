#include "uwbcalib/propagation.hpp"

#include <Eigen/Cholesky>

#include <cmath>
#include <stdexcept>

#include "uwbcalib/stats.hpp"

namespace uwbcalib {

namespace {

// Elementwise (B + B^T)/2 on a square block; IEEE addition commutes, so the
// result is symmetric to the last bit.
template <typename Block>
void symmetrize_block(Block block) {
  block = (0.5 * (block + block.transpose())).eval();
}

}  // namespace

void propagate_mean(RobotState& state, const ImuSample& sample, double dt) {
  const Eigen::Vector3d omega = sample.omega - state.gyro_bias;
  const Eigen::Vector3d accel = sample.accel - state.accel_bias;
  const Rotation3 att_next = state.attitude.compose(Rotation3::exp(omega * dt));
  const Eigen::Vector3d force_start = state.attitude.rotate(accel);
  const Eigen::Vector3d force_end = att_next.rotate(accel);
  const Eigen::Vector3d vel_next = state.velocity + (0.5 * (force_start + force_end) + kGravity) * dt;
  state.position += 0.5 * (state.velocity + vel_next) * dt;
  state.velocity = vel_next;
  state.attitude = att_next;
}

Eigen::Matrix<double, 15, 15> propagation_jacobian(const RobotState& state, const ImuSample& sample,
                                                   double dt) {
  const Eigen::Vector3d omega = sample.omega - state.gyro_bias;
  const Eigen::Vector3d accel = sample.accel - state.accel_bias;
  const Eigen::Matrix3d c0 = state.attitude.matrix();
  const Eigen::Matrix3d c1 = c0 * exp_so3(omega * dt);
  const Eigen::Matrix3d jr = right_jacobian_so3(omega * dt);
  const Eigen::Vector3d force_start = c0 * accel;
  const Eigen::Vector3d force_end = c1 * accel;

  Eigen::Matrix<double, 15, 15> phi = Eigen::Matrix<double, 15, 15>::Identity();
  phi.block<3, 3>(kIdxTheta, kIdxBg) = -c1 * jr * dt;

  const Eigen::Matrix3d phi_v_theta = -0.5 * dt * (skew(force_start) + skew(force_end));
  const Eigen::Matrix3d phi_v_bg = 0.5 * dt * dt * skew(force_end) * c1 * jr;
  const Eigen::Matrix3d phi_v_ba = -0.5 * dt * (c0 + c1);
  phi.block<3, 3>(kIdxVel, kIdxTheta) = phi_v_theta;
  phi.block<3, 3>(kIdxVel, kIdxBg) = phi_v_bg;
  phi.block<3, 3>(kIdxVel, kIdxBa) = phi_v_ba;

  // Position integrates the velocity trapezoid, so it sees half an interval
  // of every velocity sensitivity plus the direct velocity coupling.
  phi.block<3, 3>(kIdxPos, kIdxTheta) = 0.5 * dt * phi_v_theta;
  phi.block<3, 3>(kIdxPos, kIdxBg) = 0.5 * dt * phi_v_bg;
  phi.block<3, 3>(kIdxPos, kIdxVel) = dt * Eigen::Matrix3d::Identity();
  phi.block<3, 3>(kIdxPos, kIdxBa) = 0.5 * dt * phi_v_ba;
  return phi;
}

void propagate(RobotState& state, BlockCovariance& cov, const ImuSample& sample, double dt,
               const ImuNoiseParams& noise) {
  if (!(dt > 0.0) || dt > 0.1) {
    throw std::invalid_argument("propagate: dt must lie in (0, 0.1]");
  }
  if (!sample.omega.allFinite() || !sample.accel.allFinite()) {
    throw std::invalid_argument("propagate: non-finite IMU sample");
  }

  const Eigen::Matrix<double, 15, 15> phi = propagation_jacobian(state, sample, dt);
  propagate_mean(state, sample, dt);

  // White noise enters through (theta, bg, v, ba); the input matrix is
  // orthogonal on the attitude/velocity rows, so G Qc G^T is diagonal.
  Eigen::Matrix<double, 15, 15> gqg = Eigen::Matrix<double, 15, 15>::Zero();
  gqg.block<3, 3>(kIdxTheta, kIdxTheta) =
      noise.gyro_noise_std * noise.gyro_noise_std * Eigen::Matrix3d::Identity();
  gqg.block<3, 3>(kIdxBg, kIdxBg) =
      noise.gyro_bias_walk_std * noise.gyro_bias_walk_std * Eigen::Matrix3d::Identity();
  gqg.block<3, 3>(kIdxVel, kIdxVel) =
      noise.accel_noise_std * noise.accel_noise_std * Eigen::Matrix3d::Identity();
  gqg.block<3, 3>(kIdxBa, kIdxBa) =
      noise.accel_bias_walk_std * noise.accel_bias_walk_std * Eigen::Matrix3d::Identity();
  const Eigen::Matrix<double, 15, 15> q_dt = phi * gqg * phi.transpose() * dt;

  cov.P_II() = (phi * cov.P_II() * phi.transpose() + q_dt).eval();
  symmetrize_block(cov.P_II());
  if (cov.clone_dim() > 0) {
    cov.P_IC() = (phi * cov.P_IC()).eval();
    cov.matrix().block(kImuErrDim, 0, cov.clone_dim(), kImuErrDim) = cov.P_IC().transpose();
  }
  if (cov.uwb_dim() > 0) {
    cov.P_IU() = (phi * cov.P_IU()).eval();
    cov.matrix().block(cov.robot_dim(), 0, cov.uwb_dim(), kImuErrDim) = cov.P_IU().transpose();
  }
}

Eigen::Vector2d project(const Eigen::Vector3d& landmark_global, const Rotation3& attitude,
                        const Eigen::Vector3d& position, const CameraExtrinsics& ext) {
  const Eigen::Vector3d in_body = attitude.matrix_global_to_body() * (landmark_global - position);
  const Eigen::Vector3d in_cam = ext.rot_imu_to_cam.rotate(in_body) + ext.p_imu_in_cam;
  if (in_cam.z() <= 1e-6) {
    throw std::domain_error("project: landmark depth not positive");
  }
  return Eigen::Vector2d(in_cam.x() / in_cam.z(), in_cam.y() / in_cam.z());
}

Eigen::Matrix<double, 2, 6> project_pose_jacobian(const Eigen::Vector3d& landmark_global,
                                                  const Rotation3& attitude,
                                                  const Eigen::Vector3d& position,
                                                  const CameraExtrinsics& ext) {
  const Eigen::Matrix3d c_t = attitude.matrix_global_to_body();
  const Eigen::Vector3d in_body = c_t * (landmark_global - position);
  const Eigen::Vector3d in_cam = ext.rot_imu_to_cam.rotate(in_body) + ext.p_imu_in_cam;
  if (in_cam.z() <= 1e-6) {
    throw std::domain_error("project_pose_jacobian: landmark depth not positive");
  }

  Eigen::Matrix<double, 2, 3> d_uv;
  const double inv_z = 1.0 / in_cam.z();
  d_uv << inv_z, 0.0, -in_cam.x() * inv_z * inv_z, 0.0, inv_z, -in_cam.y() * inv_z * inv_z;

  const Eigen::Matrix3d r_ci = ext.rot_imu_to_cam.matrix();
  Eigen::Matrix<double, 2, 6> jac;
  jac.block<2, 3>(0, 0) = d_uv * r_ci * c_t * skew(landmark_global - position);
  jac.block<2, 3>(0, 3) = -d_uv * r_ci * c_t;
  return jac;
}

VisionUpdateReport vision_update(FilterState& state, BlockCovariance& cov,
                                 const std::vector<LandmarkObservation>& observations,
                                 const LandmarkMap& landmarks, const CameraExtrinsics& ext,
                                 double pixel_noise_std) {
  if (observations.empty()) {
    throw std::invalid_argument("vision_update: no observations");
  }
  const int rd = cov.robot_dim();
  const double pix_var = pixel_noise_std * pixel_noise_std;

  struct Row {
    int clone_idx;
    Eigen::Matrix<double, 2, 6> jac;
    Eigen::Vector2d residual;
  };
  std::vector<Row> rows;
  rows.reserve(observations.size());

  VisionUpdateReport report;
  for (const LandmarkObservation& obs : observations) {
    int clone_idx = -1;
    for (int i = 0; i < static_cast<int>(state.robot.clones.size()); ++i) {
      if (std::abs(state.robot.clones[i].timestamp - obs.timestamp) < 1e-9) {
        clone_idx = i;
        break;
      }
    }
    if (clone_idx < 0) {
      throw std::invalid_argument("vision_update: observation has no matching clone");
    }
    const auto found = landmarks.find(obs.landmark_id);
    if (found == landmarks.end()) {
      throw std::invalid_argument("vision_update: unknown landmark id");
    }
    const PoseClone& clone = state.robot.clones[clone_idx];

    Eigen::Vector2d predicted;
    Eigen::Matrix<double, 2, 6> jac;
    try {
      predicted = project(found->second, clone.attitude, clone.position, ext);
      jac = project_pose_jacobian(found->second, clone.attitude, clone.position, ext);
    } catch (const std::domain_error&) {
      ++report.gated;
      continue;
    }
    const Eigen::Vector2d residual = obs.uv - predicted;

    const int off = kImuErrDim + kCloneErrDim * clone_idx;
    const Eigen::Matrix<double, 6, 6> p_clone = cov.matrix().block(off, off, 6, 6);
    Eigen::Matrix2d innov = jac * p_clone * jac.transpose() + pix_var * Eigen::Matrix2d::Identity();
    const double maha = residual.dot(innov.inverse() * residual);
    if (maha >= kChi2Gate999Dim2) {
      ++report.gated;
      continue;
    }
    rows.push_back(Row{clone_idx, jac, residual});
  }

  if (rows.empty()) {
    throw std::runtime_error("vision_update: all observations gated out");
  }

  const int m = 2 * static_cast<int>(rows.size());
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(m, rd);
  Eigen::VectorXd r(m);
  for (int i = 0; i < static_cast<int>(rows.size()); ++i) {
    h.block<2, 6>(2 * i, kImuErrDim + kCloneErrDim * rows[i].clone_idx) = rows[i].jac;
    r.segment<2>(2 * i) = rows[i].residual;
  }
  report.used = static_cast<int>(rows.size());
  report.stacked_residual_norm = r.norm();

  // Gains come from robot-block products only; the measurement has no anchor
  // columns, so the anchor influence enters purely through the cross blocks.
  const Eigen::MatrixXd pht = cov.matrix().topLeftCorner(rd, rd) * h.transpose();
  Eigen::MatrixXd s = h * pht;
  s.diagonal().array() += pix_var;
  symmetrize_block(s.block(0, 0, m, m));
  const Eigen::LLT<Eigen::MatrixXd> llt(s);
  if (llt.info() != Eigen::Success) {
    throw std::runtime_error("vision_update: innovation not positive definite");
  }
  const Eigen::MatrixXd gain_r = llt.solve(pht.transpose()).transpose();

  state.robot.boxplus(gain_r * r);
  cov.matrix().topLeftCorner(rd, rd) -= gain_r * s * gain_r.transpose();
  symmetrize_block(cov.matrix().topLeftCorner(rd, rd));

  const int ud = cov.uwb_dim();
  if (ud > 0) {
    const Eigen::MatrixXd h_p_ru = h * cov.matrix().block(0, rd, rd, ud);  // m x ud
    const Eigen::MatrixXd gain_u = llt.solve(h_p_ru).transpose();          // ud x m
    const Eigen::VectorXd dx_u = gain_u * r;
    for (int a = 0; a < cov.n_anchors(); ++a) {
      state.anchors[a].boxplus(dx_u.segment<kUwbErrDim>(kUwbErrDim * a));
    }
    cov.matrix().block(0, rd, rd, ud) -= gain_r * s * gain_u.transpose();
    cov.matrix().block(rd, 0, ud, rd) = cov.matrix().block(0, rd, rd, ud).transpose();
    cov.matrix().block(rd, rd, ud, ud) -= gain_u * s * gain_u.transpose();
    symmetrize_block(cov.matrix().block(rd, rd, ud, ud));
  }
  cov.symmetrize();
  return report;
}

}  // namespace uwbcalib
