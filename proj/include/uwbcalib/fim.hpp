#pragma once

#include <Eigen/Core>

#include <vector>

#include "uwbcalib/initializer.hpp"
#include "uwbcalib/state.hpp"

namespace uwbcalib {

// Geometric trajectory classification over a measurement window.
struct DegeneracyFlags {
  bool static_motion = false;
  bool planar = false;
  bool collinear = false;
};

struct FimOptions {
  // Include the information carried by the state-dependent measurement
  // variance (the trace term); off gives the classical mean-gradient FIM.
  bool covariance_term = true;
  // Use the mean gradient inside the trace term instead of the variance
  // gradient. Kept for comparison; the default is the standard form for a
  // Gaussian whose mean and variance both depend on the parameter.
  bool mean_gradient_in_trace = false;
  // Restrict the parameter to (p_a, gamma), treating beta as known.
  bool fix_beta = false;
  // Central-difference step for the variance gradient.
  double fd_step = 1e-6;
};

struct FimReport {
  Eigen::MatrixXd fim;          // 5x5, or 4x4 with beta fixed
  double det = 0.0;
  Eigen::VectorXd eigenvalues;  // ascending
  int rank = 0;                 // eigenvalues above 1e-8 * max
  DegeneracyFlags flags;
};

// Per-measurement effective variance Q_d + H_I P_II H_I^T evaluated at the
// supplied anchor state (the pose rows of H depend on it).
std::vector<double> build_sigma(const InitWindow& window, const UwbState& x_u);

// Fisher information of the anchor state over the window, for the Gaussian
// measurement model whose variance inflates with pose uncertainty. Each
// measurement contributes H^T H / Sigma plus half the outer product of the
// variance gradient over Sigma^2.
FimReport general_gaussian_fim(const InitWindow& window, const UwbState& x_u,
                               const FimOptions& options = {});

DegeneracyFlags degeneracy_flags(const InitWindow& window);

}  // namespace uwbcalib
