#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "uwbcalib/refiner.hpp"
#include "uwbcalib/random.hpp"
#include "uwbcalib/stats.hpp"

using namespace uwbcalib;

namespace {

Eigen::MatrixXd random_spd(int n, double scale, RandomStream& rng) {
  Eigen::MatrixXd m(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) m(i, j) = rng.gaussian(0.0, scale);
  m = (m * m.transpose()).eval();
  m += scale * scale * Eigen::MatrixXd::Identity(n, n);
  m = m.selfadjointView<Eigen::Upper>();
  return m;
}

// Filter over a short clone window plus `n_anchors` anchors, with a random
// but well-conditioned joint covariance.
struct RefineFixture {
  FilterState state;
  BlockCovariance cov;
  TagExtrinsics tag;
  FejRegistry registry;

  explicit RefineFixture(int n_anchors, RandomStream& rng, double cov_scale = 0.05) {
    state.robot.attitude = Rotation3::exp(rng.gaussian_vec3(0.4));
    state.robot.position = rng.gaussian_vec3(1.0);
    state.robot.velocity = rng.gaussian_vec3(0.3);
    tag.p_tag_body = Eigen::Vector3d(0.08, -0.05, 0.12);

    cov = BlockCovariance(Eigen::Matrix<double, 15, 15>::Zero());
    clone_augment(state.robot, cov, 1.0, 4);
    clone_augment(state.robot, cov, 2.0, 4);

    for (int a = 0; a < n_anchors; ++a) {
      UwbState anchor;
      anchor.position = Eigen::Vector3d(4.0, -3.0, 5.0) + rng.gaussian_vec3(1.0);
      anchor.beta = 1.0 + rng.gaussian(0.0, 0.02);
      anchor.gamma = rng.gaussian(0.0, 0.1);
      state.anchors.push_back(anchor);
      cov.insert_anchor(Eigen::Matrix<double, 5, 5>::Zero(),
                        Eigen::MatrixXd::Zero(cov.robot_dim(), 5));
      registry.seed_anchor(a, anchor);
    }
    // One strictly positive definite draw over the joint dimension; drawing
    // blocks separately with random cross terms cannot guarantee that.
    cov.matrix() = random_spd(cov.dim(), cov_scale, rng);
  }

  RangingMeasurement exact_measurement(int anchor_id) const {
    RangingMeasurement meas;
    meas.anchor_id = anchor_id;
    meas.range = predict_range(state.robot.attitude, state.robot.position, tag,
                               state.anchors[anchor_id]);
    return meas;
  }
};

// Field-for-field bitwise comparison; boxminus cannot be used for this
// because the rotation log of two identical attitudes rounds to ~1e-16.
bool robot_bitwise_equal(const RobotState& a, const RobotState& b) {
  if (a.clones.size() != b.clones.size()) return false;
  bool same = (a.attitude.quaternion().coeffs().array() == b.attitude.quaternion().coeffs().array()).all() &&
              (a.gyro_bias.array() == b.gyro_bias.array()).all() &&
              (a.velocity.array() == b.velocity.array()).all() &&
              (a.accel_bias.array() == b.accel_bias.array()).all() &&
              (a.position.array() == b.position.array()).all();
  for (size_t i = 0; same && i < a.clones.size(); ++i) {
    same = (a.clones[i].attitude.quaternion().coeffs().array() ==
            b.clones[i].attitude.quaternion().coeffs().array()).all() &&
           (a.clones[i].position.array() == b.clones[i].position.array()).all();
  }
  return same;
}

}  // namespace

TEST_CASE("registry stores the first estimate only") {
  FejRegistry registry;
  UwbState first;
  first.position = Eigen::Vector3d(1.0, 2.0, 3.0);
  first.gamma = -0.3;
  CHECK(registry.seed_anchor(0, first));
  CHECK(registry.has_anchor(0));

  UwbState second;
  second.position = Eigen::Vector3d(9.0, 9.0, 9.0);
  CHECK_FALSE(registry.seed_anchor(0, second));
  CHECK(registry.anchor(0).position == first.position);
  CHECK(registry.anchor(0).gamma == first.gamma);

  CHECK_FALSE(registry.has_anchor(1));
  CHECK_THROWS_AS(registry.anchor(1), std::out_of_range);

  PoseClone clone;
  clone.position = Eigen::Vector3d(0.5, 0.0, 0.0);
  CHECK(registry.seed_clone(3.5, clone));
  CHECK_FALSE(registry.seed_clone(3.5, PoseClone{}));
  REQUIRE(registry.clone(3.5) != nullptr);
  CHECK(registry.clone(3.5)->position == clone.position);
  CHECK(registry.clone(9.9) == nullptr);
}

TEST_CASE("first-estimate rows equal current rows right after seeding") {
  RandomStream rng(201);
  RefineFixture fx(1, rng);

  Eigen::Matrix<double, 1, kImuErrDim> h_i;
  Eigen::Matrix<double, 1, kUwbErrDim> h_u;
  fej_linearize(0, fx.state, fx.tag, fx.registry, h_i, h_u);

  const RangeJacobians jac = range_jacobians(fx.state.robot.attitude, fx.state.robot.position,
                                             fx.tag, fx.state.anchors[0]);
  CHECK((h_i.segment<3>(kIdxTheta) - jac.d_theta).norm() == 0.0);
  CHECK((h_i.segment<3>(kIdxPos) - jac.d_pos).norm() == 0.0);
  CHECK(h_i.segment<3>(kIdxBg).norm() == 0.0);
  CHECK(h_i.segment<3>(kIdxVel).norm() == 0.0);
  CHECK(h_i.segment<3>(kIdxBa).norm() == 0.0);
  CHECK((h_u.head<3>() - jac.d_anchor_pos).norm() == 0.0);
  CHECK(h_u(3) == jac.d_beta);
  CHECK(h_u(4) == jac.d_gamma);

  CHECK_THROWS_AS(fej_linearize(1, fx.state, fx.tag, fx.registry, h_i, h_u),
                  std::invalid_argument);
}

TEST_CASE("first-estimate rows ignore later mean moves") {
  RandomStream rng(202);
  RefineFixture fx(1, rng);

  Eigen::Matrix<double, 1, kImuErrDim> h_i_before, h_i_after;
  Eigen::Matrix<double, 1, kUwbErrDim> h_u_before, h_u_after;
  fej_linearize(0, fx.state, fx.tag, fx.registry, h_i_before, h_u_before);

  fx.state.anchors[0].position += Eigen::Vector3d(0.4, -0.2, 0.3);
  fx.state.anchors[0].beta += 0.05;
  fx.state.anchors[0].gamma -= 0.1;
  fej_linearize(0, fx.state, fx.tag, fx.registry, h_i_after, h_u_after);

  CHECK((h_i_before - h_i_after).norm() == 0.0);
  CHECK((h_u_before - h_u_after).norm() == 0.0);
}

TEST_CASE("standard update with zero residual leaves the mean and shrinks the trace") {
  RandomStream rng(203);
  RefineFixture fx(2, rng);
  const RangingMeasurement meas = fx.exact_measurement(0);

  const FilterState state_before = fx.state;
  const double trace_before = fx.cov.matrix().trace();
  const UpdateReport report = ekf_uwb_update(fx.state, fx.cov, meas, fx.tag, 0.01);

  CHECK(report.applied);
  CHECK(report.mode == UpdateMode::kEkf);
  CHECK(report.residual == 0.0);
  CHECK(report.innovation_var > 0.0);
  // Zero innovation moves nothing, up to the attitude renormalization noise
  // of a zero-angle retraction.
  CHECK(fx.state.boxminus(state_before).norm() < 1e-12);
  CHECK(fx.cov.matrix().trace() < trace_before);
  CHECK(report.delta_p_ii > 0.0);
  CHECK(report.delta_p_uu > 0.0);
  // Bitwise symmetry survives the rank-1 downdate.
  CHECK((fx.cov.matrix().array() == fx.cov.matrix().transpose().array()).all());
  CHECK(fx.cov.min_eigenvalue() >= -1e-12 * fx.cov.max_eigenvalue());
}

TEST_CASE("schmidt update never touches the robot state or its covariance") {
  RandomStream rng(204);
  for (int trial = 0; trial < 25; ++trial) {
    RefineFixture fx(2, rng);
    RangingMeasurement meas = fx.exact_measurement(1);
    meas.range += rng.gaussian(0.0, 0.1);

    const RobotState robot_before = fx.state.robot;
    const Eigen::MatrixXd p_before = fx.cov.matrix();
    const double p_uu_trace_before = fx.cov.P_UU().trace();
    const UpdateReport report =
        skf_uwb_update(fx.state, fx.cov, meas, fx.tag, 0.01, fx.registry);

    CHECK(report.mode == UpdateMode::kSkf);
    CHECK(robot_bitwise_equal(fx.state.robot, robot_before));
    const int rd = fx.cov.robot_dim();
    CHECK((fx.cov.matrix().topLeftCorner(rd, rd).array() ==
           p_before.topLeftCorner(rd, rd).array())
              .all());
    CHECK(report.delta_p_ii == 0.0);
    CHECK(report.delta_p_ic == 0.0);
    CHECK(report.delta_p_cc == 0.0);

    if (report.applied) {
      CHECK(fx.cov.P_UU().trace() <= p_uu_trace_before);
      CHECK((fx.cov.matrix().array() == fx.cov.matrix().transpose().array()).all());
      CHECK(fx.cov.min_eigenvalue() >= -1e-10 * fx.cov.max_eigenvalue());
    }
  }
}

TEST_CASE("zero cross-covariance makes both flavors agree on the anchor block") {
  RandomStream rng(205);
  for (int trial = 0; trial < 10; ++trial) {
    RefineFixture fx(1, rng);
    // Erase the robot/anchor coupling but keep both diagonal blocks.
    fx.cov.P_rU().setZero();
    fx.cov.P_Ur().setZero();
    RangingMeasurement meas = fx.exact_measurement(0);
    meas.range += rng.gaussian(0.0, 0.05);

    FilterState state_ekf = fx.state;
    BlockCovariance cov_ekf = fx.cov;
    const UpdateReport rep_ekf =
        ekf_uwb_update(state_ekf, cov_ekf, meas, fx.tag, 0.01, &fx.registry);

    FilterState state_skf = fx.state;
    BlockCovariance cov_skf = fx.cov;
    const UpdateReport rep_skf =
        skf_uwb_update(state_skf, cov_skf, meas, fx.tag, 0.01, fx.registry);

    REQUIRE(rep_ekf.applied == rep_skf.applied);
    CHECK(rep_ekf.innovation_var == rep_skf.innovation_var);
    CHECK((state_ekf.anchors[0].boxminus(state_skf.anchors[0])).norm() < 1e-10);
    CHECK((cov_ekf.P_UU() - cov_skf.P_UU()).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("gated measurement leaves everything bitwise unchanged") {
  RandomStream rng(206);
  RefineFixture fx(1, rng);
  RangingMeasurement meas = fx.exact_measurement(0);
  meas.range += 50.0;

  const FilterState state_before = fx.state;
  const Eigen::MatrixXd p_before = fx.cov.matrix();

  const UpdateReport ekf_rep = ekf_uwb_update(fx.state, fx.cov, meas, fx.tag, 0.01);
  CHECK_FALSE(ekf_rep.applied);
  CHECK(ekf_rep.chi2 > kChi2Gate999Dim1);
  const UpdateReport skf_rep = skf_uwb_update(fx.state, fx.cov, meas, fx.tag, 0.01, fx.registry);
  CHECK_FALSE(skf_rep.applied);

  CHECK(robot_bitwise_equal(fx.state.robot, state_before.robot));
  CHECK((fx.state.anchors[0].boxminus(state_before.anchors[0])).norm() == 0.0);
  CHECK((fx.cov.matrix().array() == p_before.array()).all());
}

TEST_CASE("measurement noise is scaled by the squared range bias") {
  RandomStream rng(207);
  FilterState state;
  state.robot.position = Eigen::Vector3d(1.0, 0.0, 0.0);
  UwbState anchor;
  anchor.position = Eigen::Vector3d(4.0, 4.0, 3.0);
  anchor.beta = 2.0;
  state.anchors.push_back(anchor);

  BlockCovariance cov(Eigen::Matrix<double, 15, 15>::Zero());
  cov.insert_anchor(Eigen::Matrix<double, 5, 5>::Zero(),
                    Eigen::MatrixXd::Zero(kImuErrDim, 5));
  TagExtrinsics tag;
  RangingMeasurement meas;
  meas.anchor_id = 0;
  meas.range = predict_range(state.robot.attitude, state.robot.position, tag, anchor);

  RefineOptions scaled;
  const UpdateReport rep_scaled = ekf_uwb_update(state, cov, meas, tag, 0.01, nullptr, scaled);
  CHECK(rep_scaled.innovation_var == doctest::Approx(0.04).epsilon(1e-12));

  RefineOptions raw;
  raw.scale_noise_by_beta = false;
  const UpdateReport rep_raw = ekf_uwb_update(state, cov, meas, tag, 0.01, nullptr, raw);
  CHECK(rep_raw.innovation_var == doctest::Approx(0.01).epsilon(1e-12));
}

TEST_CASE("update validation rejects bad anchors and bad noise") {
  RandomStream rng(208);
  RefineFixture fx(1, rng);
  RangingMeasurement meas = fx.exact_measurement(0);

  RangingMeasurement bad_id = meas;
  bad_id.anchor_id = 3;
  CHECK_THROWS_AS(ekf_uwb_update(fx.state, fx.cov, bad_id, fx.tag, 0.01), std::invalid_argument);
  CHECK_THROWS_AS(ekf_uwb_update(fx.state, fx.cov, meas, fx.tag, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(ekf_uwb_update(fx.state, fx.cov, meas, fx.tag, -1.0), std::invalid_argument);

  FejRegistry empty;
  CHECK_THROWS_AS(skf_uwb_update(fx.state, fx.cov, meas, fx.tag, 0.01, empty), std::out_of_range);
}

namespace {

// One refinement pass over a scripted survey around the anchor: the robot
// pose is known, only the anchor state updates. Returns the final anchor
// position NEES and the per-block error trajectory.
struct RefineRun {
  double nees = 0.0;
  std::vector<double> error_trace;
};

RefineRun run_refinement(uint64_t seed, bool use_fej, int steps, double range_noise_std,
                         double init_pos_std, double trajectory_scale) {
  RandomStream rng(seed);
  const Eigen::Vector3d anchor_true(4.0, 3.0, 5.0);
  UwbState truth;
  truth.position = anchor_true;
  truth.beta = 1.0;
  truth.gamma = -0.3;
  TagExtrinsics tag;
  tag.p_tag_body = Eigen::Vector3d(0.1, 0.0, 0.05);

  FilterState state;
  UwbState init = truth;
  init.position += rng.gaussian_vec3(init_pos_std);
  init.beta += rng.gaussian(0.0, 0.05);
  init.gamma += rng.gaussian(0.0, 0.05);
  state.anchors.push_back(init);

  BlockCovariance cov(Eigen::Matrix<double, 15, 15>::Zero());
  Eigen::Matrix<double, 5, 5> p_uu = Eigen::Matrix<double, 5, 5>::Zero();
  p_uu.topLeftCorner(3, 3) = init_pos_std * init_pos_std * Eigen::Matrix3d::Identity();
  p_uu(3, 3) = 0.05 * 0.05;
  p_uu(4, 4) = 0.05 * 0.05;
  cov.insert_anchor(p_uu, Eigen::MatrixXd::Zero(kImuErrDim, 5));

  FejRegistry registry;
  registry.seed_anchor(0, state.anchors[0]);

  RefineRun out;
  for (int k = 0; k < steps; ++k) {
    const double t = 0.1 * k;
    state.robot.position =
        trajectory_scale * Eigen::Vector3d(std::sin(0.31 * t), 0.83 * std::sin(0.47 * t + 0.4),
                                           0.5 * std::sin(0.23 * t + 1.1));
    state.robot.attitude = Rotation3::exp(
        Eigen::Vector3d(0.2 * std::sin(0.5 * t), 0.2 * std::cos(0.4 * t), 0.01 * t));

    RangingMeasurement meas;
    meas.anchor_id = 0;
    meas.timestamp = t;
    meas.range = simulate_range(state.robot.attitude, state.robot.position, tag, truth,
                                range_noise_std, rng);
    ekf_uwb_update(state, cov, meas, tag, range_noise_std * range_noise_std,
                   use_fej ? &registry : nullptr);
    out.error_trace.push_back((state.anchors[0].position - anchor_true).norm());
  }

  const Eigen::Vector3d err = anchor_true - state.anchors[0].position;
  const Eigen::Matrix3d p_pos = cov.P_UU().topLeftCorner(3, 3);
  out.nees = err.dot(p_pos.ldlt().solve(err));
  return out;
}

}  // namespace

TEST_CASE("anchor error decreases in windowed average over a long refinement") {
  // Ensemble-average the error trace over seeds; a single run's plateau
  // wiggles by more than any honest monotonicity tolerance because the
  // filter error is strongly autocorrelated there.
  const int runs = 20;
  std::vector<double> mean_trace(500, 0.0);
  for (int r = 0; r < runs; ++r) {
    const RefineRun run = run_refinement(901 + r, true, 500, 0.01, 0.2, 3.0);
    REQUIRE(run.error_trace.size() == mean_trace.size());
    for (size_t k = 0; k < mean_trace.size(); ++k) mean_trace[k] += run.error_trace[k];
  }
  for (double& v : mean_trace) v /= runs;

  // Window widths grow with the 1/sqrt(k) error decay so every consecutive
  // pair still has clear expected separation.
  const int bounds[6] = {0, 50, 100, 200, 350, 500};
  std::vector<double> window_means;
  for (int w = 0; w < 5; ++w) {
    double sum = 0.0;
    for (int k = bounds[w]; k < bounds[w + 1]; ++k) sum += mean_trace[k];
    window_means.push_back(sum / (bounds[w + 1] - bounds[w]));
  }
  for (size_t w = 1; w < window_means.size(); ++w) {
    CHECK(window_means[w] <= window_means[w - 1] * 1.02);
  }
  CHECK(window_means.back() < 0.3 * window_means.front());
}

TEST_CASE("first-estimate linearization keeps the filter closer to consistency") {
  // A nearly static robot leaves the anchor's tangential directions
  // unobservable. Re-linearizing at the noise-driven estimate rotates the
  // rank-1 information direction a little every update and spuriously
  // collapses the tangential uncertainty; freezing the direction at the
  // first estimate accumulates information only where it exists.
  double sum_fej = 0.0;
  double sum_cur = 0.0;
  const int trials = 100;
  for (int trial = 0; trial < trials; ++trial) {
    const uint64_t seed = RandomStream::derive_seed(9100, trial);
    sum_fej += run_refinement(seed, true, 300, 0.05, 0.3, 0.1).nees;
    sum_cur += run_refinement(seed, false, 300, 0.05, 0.3, 0.1).nees;
  }
  const double mean_fej = sum_fej / trials;
  const double mean_cur = sum_cur / trials;
  CHECK(std::abs(mean_fej - 3.0) <= std::abs(mean_cur - 3.0));
  CHECK(mean_cur > 3.2);
  CHECK(mean_fej < 3.2);
}
