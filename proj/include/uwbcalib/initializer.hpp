#pragma once

#include <Eigen/Core>

#include <stdexcept>
#include <vector>

#include "uwbcalib/covariance.hpp"
#include "uwbcalib/so3.hpp"
#include "uwbcalib/state.hpp"
#include "uwbcalib/uwb_model.hpp"

namespace uwbcalib {

// One admitted ranging sample: the robot pose estimate at the measurement
// time, the matching IMU covariance block, and the biased range itself.
struct InitEntry {
  Rotation3 attitude;
  Eigen::Vector3d position = Eigen::Vector3d::Zero();
  Eigen::Matrix<double, 15, 15> p_ii = Eigen::Matrix<double, 15, 15>::Zero();
  RangingMeasurement meas;
};

struct InitWindow {
  std::vector<InitEntry> entries;
  TagExtrinsics tag;
  double range_noise_var = 0.01;  // Q_d
};

struct InitializerConfig {
  int min_window = 20;
  int max_iterations = 50;
  double step_tol = 1e-8;
  int max_halvings = 10;
  // Whiten every residual by sigma_k = Q_d + H_I P_II H_I^T in the
  // uncertainty-aware solver.
  bool whiten = true;
  // Re-opened scale bias: prior std injected on the beta diagonal of the
  // initialized anchor covariance.
  double beta_prior_std = 0.1;
  // Optional override of the default starting iterate (window centroid
  // raised by the mean range, gamma = 0).
  bool has_initial_guess = false;
  Eigen::Vector3d initial_anchor = Eigen::Vector3d::Zero();
  double initial_gamma = 0.0;
};

enum class InitStatus { kConverged, kMaxIterations, kSingular };

struct InitResult {
  Eigen::Vector3d anchor_position = Eigen::Vector3d::Zero();
  double gamma = 0.0;
  double beta = 1.0;  // held fixed during initialization
  InitStatus status = InitStatus::kSingular;
  double final_cost = 0.0;
  int iterations = 0;
  // Cost after every accepted Gauss-Newton step, starting with the initial
  // iterate; non-increasing by construction of the line search.
  std::vector<double> cost_history;
};

struct InsufficientMeasurementsError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct RankDeficientError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Checks window invariants (size, increasing timestamps, symmetric pose
// covariances); throws std::invalid_argument on violation.
void validate_window(const InitWindow& window, const InitializerConfig& config);

// Plain nonlinear least squares over (anchor position, gamma) with the range
// scale fixed at 1: minimizes the sum of squared range residuals by
// Gauss-Newton with step-halving.
InitResult ls_initialize(const InitWindow& window, const InitializerConfig& config);

// Uncertainty-aware variant: each term carries the pose-uncertainty
// contribution trace(H_I P_II H_I^T) alongside the squared residual, and both
// are whitened by sigma_k when config.whiten is set. With all P_II zero this
// reduces exactly to ls_initialize.
InitResult robust_initialize(const InitWindow& window, const InitializerConfig& config);

// Covariance for the freshly initialized anchor: stacks the per-measurement
// rows whitened by sigma_k, QR-factors the anchor-side system to get the
// (p_a, gamma) covariance, forms cross terms against the existing states
// through the final window entry (which is the current IMU state), re-opens
// beta with the configured prior, and appends the 5-dof block to cov.
// Existing covariance blocks are not modified.
void initialize_covariance(const InitWindow& window, const InitResult& init,
                           const InitializerConfig& config, BlockCovariance& cov);

}  // namespace uwbcalib
