#include "uwbcalib/initializer.hpp"

#include <Eigen/Dense>

#include <cmath>

namespace uwbcalib {

namespace {

// Pose-uncertainty image of one entry: maps the (theta, pos) covariance of
// P_II through [-skew(lever) I] so trace(H_I P_II H_I^T) = u^T m u.
Eigen::Matrix3d pose_noise_form(const InitEntry& entry, const Eigen::Vector3d& lever) {
  const Eigen::Matrix3d lx = skew(lever);
  const Eigen::Matrix3d p_tt = entry.p_ii.block<3, 3>(kIdxTheta, kIdxTheta);
  const Eigen::Matrix3d p_tp = entry.p_ii.block<3, 3>(kIdxTheta, kIdxPos);
  const Eigen::Matrix3d p_pp = entry.p_ii.block<3, 3>(kIdxPos, kIdxPos);
  Eigen::Matrix3d m = lx * p_tt * lx.transpose() - lx * p_tp - p_tp.transpose() * lx.transpose() + p_pp;
  return 0.5 * (m + m.transpose());
}

struct EntryEval {
  double dist = 0.0;
  Eigen::Vector3d u = Eigen::Vector3d::Zero();
  double residual = 0.0;
  double trace = 0.0;
  double sigma = 0.0;
};

EntryEval eval_entry(const InitEntry& entry, const Eigen::Vector3d& tag_world,
                     const Eigen::Matrix3d& noise_form, const Eigen::Vector3d& anchor_pos,
                     double gamma, double range_noise_var) {
  EntryEval out;
  const Eigen::Vector3d delta = tag_world - anchor_pos;
  out.dist = delta.norm();
  if (out.dist < 1e-9) {
    out.dist = 1e-9;
    out.u = Eigen::Vector3d::UnitZ();
  } else {
    out.u = delta / out.dist;
  }
  out.residual = entry.meas.range - (out.dist + gamma);
  out.trace = out.u.dot(noise_form * out.u);
  out.sigma = range_noise_var + out.trace;
  return out;
}

struct SolverProblem {
  const InitWindow* window;
  std::vector<Eigen::Vector3d> tag_world;    // per-entry tag position
  std::vector<Eigen::Matrix3d> noise_form;   // per-entry pose_noise_form
  bool use_trace = false;
  bool whiten = false;

  double cost(const Eigen::Vector4d& x) const {
    double total = 0.0;
    for (size_t k = 0; k < window->entries.size(); ++k) {
      const EntryEval ev = eval_entry(window->entries[k], tag_world[k], noise_form[k], x.head<3>(),
                                      x(3), window->range_noise_var);
      double term = ev.residual * ev.residual;
      if (use_trace) term += ev.trace;
      // Whitening weights are normalized by Q_d so they equal 1 when every
      // pose covariance is zero; the plain and whitened problems then run
      // through identical arithmetic.
      if (whiten) term *= window->range_noise_var / ev.sigma;
      total += term;
    }
    return total;
  }

  // Accumulates the normal equations A delta = -b at x with weights frozen
  // at the current iterate.
  void normal_equations(const Eigen::Vector4d& x, Eigen::Matrix4d& a, Eigen::Vector4d& b) const {
    a.setZero();
    b.setZero();
    for (size_t k = 0; k < window->entries.size(); ++k) {
      const EntryEval ev = eval_entry(window->entries[k], tag_world[k], noise_form[k], x.head<3>(),
                                      x(3), window->range_noise_var);
      const double w = whiten ? window->range_noise_var / ev.sigma : 1.0;

      // Range residual row: d(residual)/d(p_a) = u^T, d/d(gamma) = -1.
      Eigen::Vector4d jac_r;
      jac_r << ev.u, -1.0;
      a += w * jac_r * jac_r.transpose();
      b += w * jac_r * ev.residual;

      if (use_trace && ev.trace > 1e-300) {
        // sqrt(trace) as an extra residual with analytic gradient; gamma
        // does not enter the trace.
        const Eigen::Vector3d grad_trace =
            (-2.0 / ev.dist) * ((noise_form[k] * ev.u) - ev.u * ev.trace);
        Eigen::Vector4d jac_t = Eigen::Vector4d::Zero();
        const double sqrt_trace = std::sqrt(ev.trace);
        jac_t.head<3>() = grad_trace / (2.0 * sqrt_trace);
        a += w * jac_t * jac_t.transpose();
        b += w * jac_t * sqrt_trace;
      }
    }
  }
};

InitResult gauss_newton(const SolverProblem& problem, const InitWindow& window,
                        const InitializerConfig& config) {
  Eigen::Vector3d centroid = Eigen::Vector3d::Zero();
  double mean_range = 0.0;
  for (const InitEntry& e : window.entries) {
    centroid += e.position;
    mean_range += e.meas.range;
  }
  centroid /= static_cast<double>(window.entries.size());
  mean_range /= static_cast<double>(window.entries.size());
  double spread = 0.0;
  for (const InitEntry& e : window.entries) {
    spread = std::max(spread, (e.position - centroid).norm());
  }
  // The anchor estimate has no business moving further than the whole
  // geometry scale in one step; capping tames overshoot into the far-field
  // valley where distance and gamma trade off almost exactly.
  const double step_cap = std::abs(mean_range) + spread + 1.0;

  Eigen::Vector4d x;
  if (config.has_initial_guess) {
    x << config.initial_anchor, config.initial_gamma;
  } else {
    // Window centroid lifted by the mean range; gamma starts at zero.
    x << centroid + mean_range * Eigen::Vector3d::UnitZ(), 0.0;
  }

  InitResult result;
  result.beta = 1.0;
  double cost = problem.cost(x);
  result.cost_history.push_back(cost);
  result.status = InitStatus::kMaxIterations;

  for (int it = 0; it < config.max_iterations; ++it) {
    Eigen::Matrix4d a;
    Eigen::Vector4d b;
    problem.normal_equations(x, a, b);

    const Eigen::SelfAdjointEigenSolver<Eigen::Matrix4d> es(a);
    if (es.eigenvalues()(0) < 1e-12 * std::max(es.eigenvalues()(3), 1e-300)) {
      result.status = InitStatus::kSingular;
      break;
    }
    Eigen::Vector4d step = -a.ldlt().solve(b);
    if (step.norm() > step_cap) step *= step_cap / step.norm();

    double alpha = 1.0;
    bool accepted = false;
    for (int halving = 0; halving <= config.max_halvings; ++halving) {
      const Eigen::Vector4d candidate = x + alpha * step;
      const double candidate_cost = problem.cost(candidate);
      if (candidate_cost < cost) {
        x = candidate;
        cost = candidate_cost;
        accepted = true;
        break;
      }
      alpha *= 0.5;
    }
    result.iterations = it + 1;
    if (!accepted) {
      result.status =
          (step.norm() * alpha < config.step_tol) ? InitStatus::kConverged : InitStatus::kMaxIterations;
      break;
    }
    result.cost_history.push_back(cost);
    if (alpha * step.norm() < config.step_tol) {
      result.status = InitStatus::kConverged;
      break;
    }
  }

  result.anchor_position = x.head<3>();
  result.gamma = x(3);
  result.final_cost = cost;
  return result;
}

SolverProblem make_problem(const InitWindow& window, bool use_trace, bool whiten) {
  SolverProblem problem;
  problem.window = &window;
  problem.use_trace = use_trace;
  problem.whiten = whiten;
  problem.tag_world.reserve(window.entries.size());
  problem.noise_form.reserve(window.entries.size());
  for (const InitEntry& e : window.entries) {
    const Eigen::Vector3d lever = e.attitude.rotate(window.tag.p_tag_body);
    problem.tag_world.push_back(e.position + lever);
    problem.noise_form.push_back(pose_noise_form(e, lever));
  }
  return problem;
}

}  // namespace

void validate_window(const InitWindow& window, const InitializerConfig& config) {
  if (static_cast<int>(window.entries.size()) < config.min_window) {
    throw std::invalid_argument("init window smaller than configured minimum");
  }
  if (!(window.range_noise_var > 0.0)) {
    throw std::invalid_argument("range noise variance must be positive");
  }
  for (size_t k = 0; k < window.entries.size(); ++k) {
    const InitEntry& e = window.entries[k];
    if (k > 0 && e.meas.timestamp <= window.entries[k - 1].meas.timestamp) {
      throw std::invalid_argument("init window timestamps must increase");
    }
    if ((e.p_ii - e.p_ii.transpose()).cwiseAbs().maxCoeff() > 1e-9) {
      throw std::invalid_argument("init window pose covariance not symmetric");
    }
  }
}

InitResult ls_initialize(const InitWindow& window, const InitializerConfig& config) {
  validate_window(window, config);
  return gauss_newton(make_problem(window, false, false), window, config);
}

InitResult robust_initialize(const InitWindow& window, const InitializerConfig& config) {
  validate_window(window, config);
  return gauss_newton(make_problem(window, true, config.whiten), window, config);
}

void initialize_covariance(const InitWindow& window, const InitResult& init,
                           const InitializerConfig& config, BlockCovariance& cov) {
  const int m = static_cast<int>(window.entries.size());
  if (m < 5) {
    throw InsufficientMeasurementsError("anchor covariance needs at least 5 measurements");
  }
  if (init.status == InitStatus::kSingular) {
    throw std::invalid_argument("cannot build covariance from a singular initialization");
  }

  // Whitened anchor-side rows at the initializer solution (beta still 1).
  Eigen::MatrixXd h_b(m, 4);
  Eigen::RowVectorXd last_h_i;
  Eigen::Vector4d last_h_u = Eigen::Vector4d::Zero();
  double last_inv_sqrt_sigma = 0.0;
  for (int k = 0; k < m; ++k) {
    const InitEntry& e = window.entries[k];
    const Eigen::Vector3d lever = e.attitude.rotate(window.tag.p_tag_body);
    const Eigen::Vector3d tag_world = e.position + lever;
    const Eigen::Matrix3d noise_form = pose_noise_form(e, lever);
    const EntryEval ev = eval_entry(e, tag_world, noise_form, init.anchor_position, init.gamma,
                                    window.range_noise_var);
    const double inv_sqrt_sigma = 1.0 / std::sqrt(ev.sigma);

    Eigen::Vector4d h_u;
    h_u << -ev.u, 1.0;
    h_b.row(k) = inv_sqrt_sigma * h_u.transpose();

    if (k == m - 1) {
      last_h_u = h_u;
      last_inv_sqrt_sigma = inv_sqrt_sigma;
      Eigen::RowVectorXd h_i = Eigen::RowVectorXd::Zero(kImuErrDim);
      h_i.segment<3>(kIdxTheta) = -ev.u.transpose() * skew(lever);
      h_i.segment<3>(kIdxPos) = ev.u.transpose();
      last_h_i = h_i;
    }
  }

  // QR split: only the triangular anchor-side factor matters, the orthogonal
  // part carries no information about x_U.
  const Eigen::HouseholderQR<Eigen::MatrixXd> qr(h_b);
  const Eigen::Matrix4d r_full = qr.matrixQR().topRows(4).triangularView<Eigen::Upper>();
  const double max_diag = r_full.diagonal().cwiseAbs().maxCoeff();
  if (r_full.diagonal().cwiseAbs().minCoeff() < 1e-10 * max_diag) {
    throw RankDeficientError("anchor-side system is rank deficient");
  }
  const Eigen::Matrix4d r_inv =
      r_full.triangularView<Eigen::Upper>().solve(Eigen::Matrix4d::Identity());
  Eigen::Matrix4d p_uu4 = r_inv * r_inv.transpose();
  p_uu4 = 0.5 * (p_uu4 + p_uu4.transpose());

  // Cross terms: the anchor error correlates with the robot only through the
  // final window entry, which is the current IMU state. Clone cross terms
  // follow through the stored robot/clone correlation.
  const Eigen::VectorXd g = (last_inv_sqrt_sigma * last_h_i).transpose();  // 15x1
  const Eigen::Vector4d t4 = p_uu4 * (last_inv_sqrt_sigma * last_h_u);
  const Eigen::MatrixXd p_iu4 = -(cov.P_II() * g) * t4.transpose();  // 15x4
  Eigen::MatrixXd p_ru4(cov.robot_dim(), 4);
  p_ru4.topRows(kImuErrDim) = p_iu4;
  if (cov.clone_dim() > 0) {
    p_ru4.bottomRows(cov.clone_dim()) = -(cov.P_IC().transpose() * g) * t4.transpose();
  }

  // Re-open beta: embed the (p_a, gamma) covariance into the 5-dof anchor
  // order (p_a, beta, gamma) with an independent beta prior.
  const int map[4] = {0, 1, 2, 4};
  Eigen::Matrix<double, 5, 5> p_uu5 = Eigen::Matrix<double, 5, 5>::Zero();
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) p_uu5(map[i], map[j]) = p_uu4(i, j);
  p_uu5(3, 3) = config.beta_prior_std * config.beta_prior_std;

  Eigen::MatrixXd p_ru5 = Eigen::MatrixXd::Zero(cov.robot_dim(), 5);
  for (int j = 0; j < 4; ++j) p_ru5.col(map[j]) = p_ru4.col(j);

  cov.insert_anchor(p_uu5, p_ru5);
}

}  // namespace uwbcalib
