#include "uwbcalib/refiner.hpp"

#include <Eigen/Dense>

#include <cmath>

#include "uwbcalib/stats.hpp"

namespace uwbcalib {

bool FejRegistry::seed_anchor(int anchor_id, const UwbState& first_estimate) {
  return anchors_.emplace(anchor_id, first_estimate).second;
}

bool FejRegistry::seed_clone(double timestamp, const PoseClone& first_estimate) {
  return clones_.emplace(timestamp, first_estimate).second;
}

bool FejRegistry::has_anchor(int anchor_id) const { return anchors_.count(anchor_id) > 0; }

const UwbState& FejRegistry::anchor(int anchor_id) const {
  const auto it = anchors_.find(anchor_id);
  if (it == anchors_.end()) {
    throw std::out_of_range("FejRegistry: anchor has no first estimate");
  }
  return it->second;
}

const PoseClone* FejRegistry::clone(double timestamp) const {
  const auto it = clones_.find(timestamp);
  return it == clones_.end() ? nullptr : &it->second;
}

void fej_linearize(int anchor_id, const FilterState& state, const TagExtrinsics& tag,
                   const FejRegistry& registry, Eigen::Matrix<double, 1, kImuErrDim>& h_i,
                   Eigen::Matrix<double, 1, kUwbErrDim>& h_u) {
  if (anchor_id < 0 || anchor_id >= static_cast<int>(state.anchors.size())) {
    throw std::invalid_argument("fej_linearize: anchor id not in state");
  }
  const UwbState& first = registry.anchor(anchor_id);
  const RangeJacobians jac =
      range_jacobians(state.robot.attitude, state.robot.position, tag, first);
  h_i.setZero();
  h_i.segment<3>(kIdxTheta) = jac.d_theta;
  h_i.segment<3>(kIdxPos) = jac.d_pos;
  h_u << jac.d_anchor_pos, jac.d_beta, jac.d_gamma;
}

namespace {

// Everything both update flavors need: residual, innovation, and the full
// P H^T column split at the robot/anchor boundary.
struct LinearizedRange {
  double residual = 0.0;
  double s = 0.0;
  double chi2 = 0.0;
  Eigen::VectorXd pht_r;
  Eigen::VectorXd pht_u;
};

LinearizedRange linearize_range(const FilterState& state, const BlockCovariance& cov,
                                const RangingMeasurement& meas, const TagExtrinsics& tag,
                                double range_noise_var, const FejRegistry* registry,
                                const RefineOptions& options) {
  const int anchor_id = meas.anchor_id;
  if (anchor_id < 0 || anchor_id >= static_cast<int>(state.anchors.size())) {
    throw std::invalid_argument("uwb update: anchor id not in state");
  }
  if (static_cast<int>(state.anchors.size()) != cov.n_anchors()) {
    throw std::invalid_argument("uwb update: state/covariance anchor count mismatch");
  }
  if (!(range_noise_var > 0.0)) {
    throw std::invalid_argument("uwb update: range noise variance must be positive");
  }

  const UwbState& current = state.anchors[anchor_id];
  Eigen::Matrix<double, 1, kImuErrDim> h_i;
  Eigen::Matrix<double, 1, kUwbErrDim> h_u;
  if (registry != nullptr) {
    fej_linearize(anchor_id, state, tag, *registry, h_i, h_u);
  } else {
    const RangeJacobians jac =
        range_jacobians(state.robot.attitude, state.robot.position, tag, current);
    h_i.setZero();
    h_i.segment<3>(kIdxTheta) = jac.d_theta;
    h_i.segment<3>(kIdxPos) = jac.d_pos;
    h_u << jac.d_anchor_pos, jac.d_beta, jac.d_gamma;
  }

  Eigen::RowVectorXd h_robot = Eigen::RowVectorXd::Zero(cov.robot_dim());
  h_robot.head<kImuErrDim>() = h_i;
  Eigen::RowVectorXd h_uwb = Eigen::RowVectorXd::Zero(cov.uwb_dim());
  h_uwb.segment<kUwbErrDim>(cov.anchor_offset(anchor_id) - cov.robot_dim()) = h_u;

  LinearizedRange lin;
  lin.residual =
      meas.range - predict_range(state.robot.attitude, state.robot.position, tag, current);

  const Eigen::MatrixXd p_ru = cov.P_rU();
  lin.pht_r = cov.P_rr() * h_robot.transpose() + p_ru * h_uwb.transpose();
  lin.pht_u = p_ru.transpose() * h_robot.transpose() + cov.P_UU() * h_uwb.transpose();

  double noise = range_noise_var;
  if (options.scale_noise_by_beta) noise *= current.beta * current.beta;
  lin.s = h_robot.dot(lin.pht_r) + h_uwb.dot(lin.pht_u) + noise;
  if (!(lin.s > 0.0)) {
    throw std::runtime_error("uwb update: innovation variance not positive");
  }
  lin.chi2 = lin.residual * lin.residual / lin.s;
  return lin;
}

void apply_anchor_delta(FilterState& state, const Eigen::VectorXd& dx_u) {
  for (size_t a = 0; a < state.anchors.size(); ++a) {
    state.anchors[a].boxplus(dx_u.segment<kUwbErrDim>(kUwbErrDim * static_cast<int>(a)));
  }
}

}  // namespace

UpdateReport ekf_uwb_update(FilterState& state, BlockCovariance& cov,
                            const RangingMeasurement& meas, const TagExtrinsics& tag,
                            double range_noise_var, const FejRegistry* registry,
                            const RefineOptions& options) {
  const LinearizedRange lin =
      linearize_range(state, cov, meas, tag, range_noise_var, registry, options);
  UpdateReport report;
  report.mode = UpdateMode::kEkf;
  report.residual = lin.residual;
  report.innovation_var = lin.s;
  report.chi2 = lin.chi2;
  if (lin.chi2 > kChi2Gate999Dim1) return report;

  const Eigen::VectorXd gain_r = lin.pht_r / lin.s;
  const Eigen::VectorXd gain_u = lin.pht_u / lin.s;
  state.robot.boxplus(gain_r * lin.residual);
  apply_anchor_delta(state, gain_u * lin.residual);

  // P - K S K^T expands to outer products of P H^T; elementwise products
  // commute, so each block write keeps the matrix bitwise symmetric.
  const Eigen::MatrixXd d_rr = lin.pht_r * lin.pht_r.transpose() / lin.s;
  const Eigen::MatrixXd d_ru = lin.pht_r * lin.pht_u.transpose() / lin.s;
  const Eigen::MatrixXd d_uu = lin.pht_u * lin.pht_u.transpose() / lin.s;
  cov.P_rr() -= d_rr;
  cov.P_rU() -= d_ru;
  cov.P_Ur() -= d_ru.transpose();
  cov.P_UU() -= d_uu;

  report.applied = true;
  report.delta_p_ii = d_rr.topLeftCorner(kImuErrDim, kImuErrDim).norm();
  report.delta_p_ic = d_rr.topRightCorner(kImuErrDim, cov.clone_dim()).norm();
  report.delta_p_cc = d_rr.bottomRightCorner(cov.clone_dim(), cov.clone_dim()).norm();
  report.delta_p_ru = d_ru.norm();
  report.delta_p_uu = d_uu.norm();
  return report;
}

UpdateReport skf_uwb_update(FilterState& state, BlockCovariance& cov,
                            const RangingMeasurement& meas, const TagExtrinsics& tag,
                            double range_noise_var, const FejRegistry& registry,
                            const RefineOptions& options) {
  const LinearizedRange lin =
      linearize_range(state, cov, meas, tag, range_noise_var, &registry, options);
  UpdateReport report;
  report.mode = UpdateMode::kSkf;
  report.residual = lin.residual;
  report.innovation_var = lin.s;
  report.chi2 = lin.chi2;
  if (lin.chi2 > kChi2Gate999Dim1) return report;

  // Suppressing the robot gain drops the P_rr correction and the robot mean
  // move; the anchor block and the cross block see exactly the standard
  // update, which keeps the joint matrix a valid (conservative) posterior.
  const Eigen::VectorXd gain_u = lin.pht_u / lin.s;
  apply_anchor_delta(state, gain_u * lin.residual);

  const Eigen::MatrixXd d_ru = lin.pht_r * lin.pht_u.transpose() / lin.s;
  const Eigen::MatrixXd d_uu = lin.pht_u * lin.pht_u.transpose() / lin.s;
  cov.P_rU() -= d_ru;
  cov.P_Ur() -= d_ru.transpose();
  cov.P_UU() -= d_uu;

  report.applied = true;
  report.delta_p_ru = d_ru.norm();
  report.delta_p_uu = d_uu.norm();
  return report;
}

}  // namespace uwbcalib
