#pragma once

#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include <stdexcept>

#include "uwbcalib/state.hpp"

namespace uwbcalib {

// Joint covariance over the stacked error state, laid out as
//   [ imu(15) | clones(6*Nc) | uwb(5*Na) ]
// with named accessors for the partition blocks. All mutators preserve the
// layout; callers are expected to symmetrize() after arithmetic updates.
class BlockCovariance {
 public:
  BlockCovariance() : BlockCovariance(Eigen::Matrix<double, 15, 15>::Zero()) {}

  explicit BlockCovariance(const Eigen::MatrixXd& imu_cov) : n_clones_(0), n_anchors_(0), mat_(imu_cov) {
    if (imu_cov.rows() != kImuErrDim || imu_cov.cols() != kImuErrDim) {
      throw std::invalid_argument("BlockCovariance: IMU block must be 15x15");
    }
  }

  int n_clones() const { return n_clones_; }
  int n_anchors() const { return n_anchors_; }
  int dim() const { return static_cast<int>(mat_.rows()); }
  int robot_dim() const { return kImuErrDim + kCloneErrDim * n_clones_; }
  int clone_dim() const { return kCloneErrDim * n_clones_; }
  int uwb_dim() const { return kUwbErrDim * n_anchors_; }

  const Eigen::MatrixXd& matrix() const { return mat_; }
  Eigen::MatrixXd& matrix() { return mat_; }

  Eigen::Block<Eigen::MatrixXd> P_II() { return mat_.block(0, 0, kImuErrDim, kImuErrDim); }
  Eigen::Block<Eigen::MatrixXd> P_IC() { return mat_.block(0, kImuErrDim, kImuErrDim, clone_dim()); }
  Eigen::Block<Eigen::MatrixXd> P_IU() { return mat_.block(0, robot_dim(), kImuErrDim, uwb_dim()); }
  Eigen::Block<Eigen::MatrixXd> P_CC() { return mat_.block(kImuErrDim, kImuErrDim, clone_dim(), clone_dim()); }
  Eigen::Block<Eigen::MatrixXd> P_CU() { return mat_.block(kImuErrDim, robot_dim(), clone_dim(), uwb_dim()); }
  Eigen::Block<Eigen::MatrixXd> P_UU() { return mat_.block(robot_dim(), robot_dim(), uwb_dim(), uwb_dim()); }

  // Whole-robot (imu + clones) partitions.
  Eigen::Block<Eigen::MatrixXd> P_rr() { return mat_.block(0, 0, robot_dim(), robot_dim()); }
  Eigen::Block<Eigen::MatrixXd> P_rU() { return mat_.block(0, robot_dim(), robot_dim(), uwb_dim()); }
  Eigen::Block<Eigen::MatrixXd> P_Ur() { return mat_.block(robot_dim(), 0, uwb_dim(), robot_dim()); }

  Eigen::MatrixXd P_II() const { return mat_.block(0, 0, kImuErrDim, kImuErrDim); }
  Eigen::MatrixXd P_IC() const { return mat_.block(0, kImuErrDim, kImuErrDim, clone_dim()); }
  Eigen::MatrixXd P_IU() const { return mat_.block(0, robot_dim(), kImuErrDim, uwb_dim()); }
  Eigen::MatrixXd P_CC() const { return mat_.block(kImuErrDim, kImuErrDim, clone_dim(), clone_dim()); }
  Eigen::MatrixXd P_CU() const { return mat_.block(kImuErrDim, robot_dim(), clone_dim(), uwb_dim()); }
  Eigen::MatrixXd P_UU() const { return mat_.block(robot_dim(), robot_dim(), uwb_dim(), uwb_dim()); }

  Eigen::MatrixXd P_rr() const { return mat_.block(0, 0, robot_dim(), robot_dim()); }
  Eigen::MatrixXd P_rU() const { return mat_.block(0, robot_dim(), robot_dim(), uwb_dim()); }

  // 5x5 diagonal block of anchor `a`.
  Eigen::Block<Eigen::MatrixXd> anchor_block(int a) {
    check_anchor(a);
    const int off = robot_dim() + kUwbErrDim * a;
    return mat_.block(off, off, kUwbErrDim, kUwbErrDim);
  }

  int anchor_offset(int a) const {
    check_anchor(a);
    return robot_dim() + kUwbErrDim * a;
  }

  // Stochastic cloning: append 6 rows/cols that duplicate the current
  // (attitude, position) rows of the IMU block across the whole matrix.
  void augment_clone() {
    const int old_dim = dim();
    const int rd = robot_dim();
    Eigen::MatrixXd grown(old_dim + kCloneErrDim, old_dim + kCloneErrDim);

    // Jacobian of the augmentation is [I; S; I_u] with S selecting rows
    // {theta, pos} of the IMU block; implemented as plain block copies.
    const int new_rd = rd + kCloneErrDim;
    grown.block(0, 0, rd, rd) = mat_.block(0, 0, rd, rd);
    grown.block(0, new_rd, rd, uwb_dim()) = mat_.block(0, rd, rd, uwb_dim());
    grown.block(new_rd, 0, uwb_dim(), rd) = mat_.block(rd, 0, uwb_dim(), rd);
    grown.block(new_rd, new_rd, uwb_dim(), uwb_dim()) = mat_.block(rd, rd, uwb_dim(), uwb_dim());

    auto copy_pose_rows = [&](auto&& dst_rows, int src_row0) {
      dst_rows.block(0, 0, 3, rd) = mat_.block(src_row0, 0, 3, rd);
      dst_rows.block(0, new_rd, 3, uwb_dim()) = mat_.block(src_row0, rd, 3, uwb_dim());
    };
    copy_pose_rows(grown.block(rd, 0, 3, old_dim + kCloneErrDim), kIdxTheta);
    copy_pose_rows(grown.block(rd + 3, 0, 3, old_dim + kCloneErrDim), kIdxPos);

    // New columns mirror the new rows; the 6x6 corner is the pose covariance.
    grown.block(0, rd, rd, 3) = mat_.block(0, kIdxTheta, rd, 3);
    grown.block(0, rd + 3, rd, 3) = mat_.block(0, kIdxPos, rd, 3);
    grown.block(new_rd, rd, uwb_dim(), 3) = mat_.block(rd, kIdxTheta, uwb_dim(), 3);
    grown.block(new_rd, rd + 3, uwb_dim(), 3) = mat_.block(rd, kIdxPos, uwb_dim(), 3);

    grown.block(rd, rd, 3, 3) = mat_.block(kIdxTheta, kIdxTheta, 3, 3);
    grown.block(rd, rd + 3, 3, 3) = mat_.block(kIdxTheta, kIdxPos, 3, 3);
    grown.block(rd + 3, rd, 3, 3) = mat_.block(kIdxPos, kIdxTheta, 3, 3);
    grown.block(rd + 3, rd + 3, 3, 3) = mat_.block(kIdxPos, kIdxPos, 3, 3);

    mat_.swap(grown);
    ++n_clones_;
  }

  // Drop clone `index` (0 = oldest); remaining blocks are untouched copies.
  void marginalize_clone(int index) {
    if (index < 0 || index >= n_clones_) {
      throw std::invalid_argument("BlockCovariance::marginalize_clone: invalid index");
    }
    const int start = kImuErrDim + kCloneErrDim * index;
    const int end = start + kCloneErrDim;
    const int old_dim = dim();
    Eigen::MatrixXd shrunk(old_dim - kCloneErrDim, old_dim - kCloneErrDim);
    shrunk.block(0, 0, start, start) = mat_.block(0, 0, start, start);
    shrunk.block(0, start, start, old_dim - end) = mat_.block(0, end, start, old_dim - end);
    shrunk.block(start, 0, old_dim - end, start) = mat_.block(end, 0, old_dim - end, start);
    shrunk.block(start, start, old_dim - end, old_dim - end) = mat_.block(end, end, old_dim - end, old_dim - end);
    mat_.swap(shrunk);
    --n_clones_;
  }

  // Append one 5-dof anchor block with its cross-covariances to the
  // existing robot/clone states. Cross terms to previously inserted
  // anchors start at zero.
  void insert_anchor(const Eigen::Matrix<double, 5, 5>& p_uu, const Eigen::MatrixXd& p_ru) {
    if (p_ru.rows() != robot_dim() || p_ru.cols() != kUwbErrDim) {
      throw std::invalid_argument("BlockCovariance::insert_anchor: cross-term shape mismatch");
    }
    const int old_dim = dim();
    Eigen::MatrixXd grown = Eigen::MatrixXd::Zero(old_dim + kUwbErrDim, old_dim + kUwbErrDim);
    grown.block(0, 0, old_dim, old_dim) = mat_;
    grown.block(0, old_dim, robot_dim(), kUwbErrDim) = p_ru;
    grown.block(old_dim, 0, kUwbErrDim, robot_dim()) = p_ru.transpose();
    grown.block(old_dim, old_dim, kUwbErrDim, kUwbErrDim) = p_uu;
    mat_.swap(grown);
    ++n_anchors_;
  }

  // P <- (P + P^T)/2. Bitwise no-op on blocks that are already symmetric.
  void symmetrize() { mat_ = ((mat_ + mat_.transpose()) * 0.5).eval(); }

  double min_eigenvalue() const {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (mat_ + mat_.transpose()));
    return es.eigenvalues().minCoeff();
  }

  double max_eigenvalue() const {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (mat_ + mat_.transpose()));
    return es.eigenvalues().maxCoeff();
  }

 private:
  void check_anchor(int a) const {
    if (a < 0 || a >= n_anchors_) {
      throw std::invalid_argument("BlockCovariance: anchor index out of range");
    }
  }

  int n_clones_;
  int n_anchors_;
  Eigen::MatrixXd mat_;
};

// Appends the current pose as a clone and grows the covariance accordingly.
inline void clone_augment(RobotState& state, BlockCovariance& cov, double timestamp, int max_clones) {
  if (static_cast<int>(state.clones.size()) >= max_clones) {
    throw std::runtime_error("clone_augment: window full, marginalize first");
  }
  if (!state.clones.empty() && timestamp <= state.clones.back().timestamp) {
    throw std::invalid_argument("clone_augment: timestamps must be strictly increasing");
  }
  state.clones.push_back(PoseClone{state.attitude, state.position, timestamp});
  cov.augment_clone();
}

inline void clone_marginalize(RobotState& state, BlockCovariance& cov, int index) {
  if (index < 0 || index >= static_cast<int>(state.clones.size())) {
    throw std::invalid_argument("clone_marginalize: invalid index");
  }
  state.clones.erase(state.clones.begin() + index);
  cov.marginalize_clone(index);
}

}  // namespace uwbcalib
