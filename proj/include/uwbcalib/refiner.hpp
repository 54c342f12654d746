#pragma once

#include <Eigen/Core>

#include <map>
#include <stdexcept>

#include "uwbcalib/covariance.hpp"
#include "uwbcalib/state.hpp"
#include "uwbcalib/uwb_model.hpp"

namespace uwbcalib {

// First-estimate store for linearization points. Each variable is written
// once; later seed calls for the same key are ignored so the stored value
// survives every subsequent mean update.
class FejRegistry {
 public:
  // Returns true when the value was stored, false when the key was already
  // seeded and the call left the registry unchanged.
  bool seed_anchor(int anchor_id, const UwbState& first_estimate);
  bool seed_clone(double timestamp, const PoseClone& first_estimate);

  bool has_anchor(int anchor_id) const;
  // Throws std::out_of_range for an unseeded anchor.
  const UwbState& anchor(int anchor_id) const;
  const PoseClone* clone(double timestamp) const;

 private:
  std::map<int, UwbState> anchors_;
  std::map<double, PoseClone> clones_;
};

enum class UpdateMode { kEkf, kSkf };

struct UpdateReport {
  double residual = 0.0;
  double innovation_var = 0.0;
  double chi2 = 0.0;
  bool applied = false;
  UpdateMode mode = UpdateMode::kEkf;
  // Frobenius norms of the covariance change per block family.
  double delta_p_ii = 0.0;
  double delta_p_ic = 0.0;
  double delta_p_cc = 0.0;
  double delta_p_ru = 0.0;
  double delta_p_uu = 0.0;
};

struct RefineOptions {
  // Additive range noise passes through the scale bias, so its variance in
  // the measurement is beta^2 * Q_d; switch off to use raw Q_d.
  bool scale_noise_by_beta = true;
};

// Measurement Jacobian rows for one anchor, with the anchor-dependent terms
// evaluated at the registry's first estimate and the robot pose terms at the
// current estimate. Throws std::out_of_range when the anchor is unseeded and
// std::invalid_argument when the id does not exist in the state.
void fej_linearize(int anchor_id, const FilterState& state, const TagExtrinsics& tag,
                   const FejRegistry& registry, Eigen::Matrix<double, 1, kImuErrDim>& h_i,
                   Eigen::Matrix<double, 1, kUwbErrDim>& h_u);

// Standard full-state update: every block of the mean and covariance moves.
// A null registry linearizes at the current estimate. Gated measurements
// (chi-square 0.999, 1 dof) leave the state untouched and are reported.
// Throws std::runtime_error when the innovation variance is not positive.
UpdateReport ekf_uwb_update(FilterState& state, BlockCovariance& cov,
                            const RangingMeasurement& meas, const TagExtrinsics& tag,
                            double range_noise_var, const FejRegistry* registry = nullptr,
                            const RefineOptions& options = {});

// Schmidt update: the anchor mean and the P_UU / P_rU blocks move, while the
// robot mean and P_II, P_IC, P_CC stay bitwise identical to their pre-call
// contents. Jacobians always come from the registry.
UpdateReport skf_uwb_update(FilterState& state, BlockCovariance& cov,
                            const RangingMeasurement& meas, const TagExtrinsics& tag,
                            double range_noise_var, const FejRegistry& registry,
                            const RefineOptions& options = {});

}  // namespace uwbcalib
