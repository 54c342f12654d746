#include "uwbcalib/fim.hpp"

#include <Eigen/Dense>
#include <Eigen/SVD>

#include <cmath>
#include <stdexcept>

#include "uwbcalib/uwb_model.hpp"

namespace uwbcalib {

namespace {

void check_window(const InitWindow& window) {
  if (window.entries.empty()) {
    throw std::invalid_argument("fim: window has no measurements");
  }
  if (!(window.range_noise_var > 0.0)) {
    throw std::invalid_argument("fim: range noise variance must be positive");
  }
}

// (theta, pos) rows of the pose Jacobian stacked into one 1x6 row.
Eigen::Matrix<double, 1, 6> pose_rows(const InitEntry& entry, const TagExtrinsics& tag,
                                      const UwbState& x_u) {
  const RangeJacobians jac = range_jacobians(entry.attitude, entry.position, tag, x_u);
  Eigen::Matrix<double, 1, 6> h;
  h << jac.d_theta, jac.d_pos;
  return h;
}

UwbState perturbed(const UwbState& x_u, int dof, double delta, bool fix_beta) {
  UwbState out = x_u;
  if (dof < 3) {
    out.position(dof) += delta;
  } else if (!fix_beta && dof == 3) {
    out.beta += delta;
  } else {
    out.gamma += delta;
  }
  return out;
}

}  // namespace

std::vector<double> build_sigma(const InitWindow& window, const UwbState& x_u) {
  check_window(window);
  std::vector<double> sigma;
  sigma.reserve(window.entries.size());
  for (const InitEntry& entry : window.entries) {
    const Eigen::Matrix<double, 1, 6> h = pose_rows(entry, window.tag, x_u);
    Eigen::Matrix<double, 6, 6> p;
    p.topLeftCorner<3, 3>() = entry.p_ii.block<3, 3>(kIdxTheta, kIdxTheta);
    p.topRightCorner<3, 3>() = entry.p_ii.block<3, 3>(kIdxTheta, kIdxPos);
    p.bottomLeftCorner<3, 3>() = entry.p_ii.block<3, 3>(kIdxPos, kIdxTheta);
    p.bottomRightCorner<3, 3>() = entry.p_ii.block<3, 3>(kIdxPos, kIdxPos);
    sigma.push_back(window.range_noise_var + h * p * h.transpose());
  }
  return sigma;
}

FimReport general_gaussian_fim(const InitWindow& window, const UwbState& x_u,
                               const FimOptions& options) {
  check_window(window);
  const int m = static_cast<int>(window.entries.size());
  const int dim = options.fix_beta ? 4 : 5;

  // Mean-gradient rows at the evaluation point.
  Eigen::MatrixXd h(m, dim);
  for (int k = 0; k < m; ++k) {
    const RangeJacobians jac =
        range_jacobians(window.entries[k].attitude, window.entries[k].position, window.tag, x_u);
    if (options.fix_beta) {
      h.row(k) << jac.d_anchor_pos, jac.d_gamma;
    } else {
      h.row(k) << jac.d_anchor_pos, jac.d_beta, jac.d_gamma;
    }
  }

  const std::vector<double> sigma = build_sigma(window, x_u);

  // Variance gradient by central differences on the whole window.
  Eigen::MatrixXd dsigma = Eigen::MatrixXd::Zero(m, dim);
  if (options.covariance_term && !options.mean_gradient_in_trace) {
    for (int d = 0; d < dim; ++d) {
      const std::vector<double> plus =
          build_sigma(window, perturbed(x_u, d, options.fd_step, options.fix_beta));
      const std::vector<double> minus =
          build_sigma(window, perturbed(x_u, d, -options.fd_step, options.fix_beta));
      for (int k = 0; k < m; ++k) {
        dsigma(k, d) = (plus[k] - minus[k]) / (2.0 * options.fd_step);
      }
    }
  }

  FimReport report;
  report.fim = Eigen::MatrixXd::Zero(dim, dim);
  for (int k = 0; k < m; ++k) {
    report.fim += h.row(k).transpose() * h.row(k) / sigma[k];
    if (options.covariance_term) {
      const Eigen::RowVectorXd g =
          options.mean_gradient_in_trace ? Eigen::RowVectorXd(h.row(k)) : Eigen::RowVectorXd(dsigma.row(k));
      report.fim += 0.5 * g.transpose() * g / (sigma[k] * sigma[k]);
    }
  }

  report.det = report.fim.determinant();
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(report.fim);
  report.eigenvalues = es.eigenvalues();
  const double max_eig = std::max(report.eigenvalues.maxCoeff(), 0.0);
  report.rank = 0;
  for (int i = 0; i < dim; ++i) {
    if (report.eigenvalues(i) > 1e-8 * max_eig && report.eigenvalues(i) > 0.0) ++report.rank;
  }
  report.flags = degeneracy_flags(window);
  return report;
}

DegeneracyFlags degeneracy_flags(const InitWindow& window) {
  check_window(window);
  const int m = static_cast<int>(window.entries.size());
  Eigen::Vector3d centroid = Eigen::Vector3d::Zero();
  for (const InitEntry& e : window.entries) centroid += e.position;
  centroid /= static_cast<double>(m);

  Eigen::MatrixXd centered(m, 3);
  double spread = 0.0;
  for (int k = 0; k < m; ++k) {
    const Eigen::Vector3d d = window.entries[k].position - centroid;
    centered.row(k) = d.transpose();
    spread = std::max(spread, d.norm());
  }

  DegeneracyFlags flags;
  flags.static_motion = spread < 1e-3;

  const Eigen::JacobiSVD<Eigen::MatrixXd> svd(centered);
  const Eigen::Vector3d sv = svd.singularValues();
  // RMS distance to the best-fit plane and line respectively.
  const double plane_rms = sv(2) / std::sqrt(static_cast<double>(m));
  const double line_rms = std::sqrt((sv(1) * sv(1) + sv(2) * sv(2)) / static_cast<double>(m));
  flags.planar = plane_rms < 1e-3;
  flags.collinear = line_rms < 1e-3;
  return flags;
}

}  // namespace uwbcalib
