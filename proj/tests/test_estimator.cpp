#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "helpers.hpp"
#include "sgee/errors.hpp"
#include "sgee/estimator.hpp"
#include "sgee/stats.hpp"

using namespace sgee;
using testing::Layout;

namespace {

Layout smooth_layout(int per_sequence) {
  Layout L;
  L.sequences = {"ABA", "BAB"};
  L.subjects_per_sequence = per_sequence;
  L.times = {0, 0.5, 1, 2, 3, 4, 5, 6};
  L.time_effect = [](double t) { return std::sin(t); };
  L.carry_effect = [](double t) { return 0.3 * std::cos(t); };
  return L;
}

ModelSpec smooth_spec(Family f, CorrelationStructure c) {
  ModelSpec spec;
  spec.family = f;
  spec.correlation = c;
  spec.carryover.reference = "B";
  spec.spline.basis_size = 6;
  return spec;
}

Eigen::VectorXd ols(const DesignBundle& b) {
  const Eigen::MatrixXd X = b.stacked_X();
  return (X.transpose() * X).ldlt().solve(X.transpose() * b.stacked_y());
}

bool symmetric_psd(const Eigen::MatrixXd& M) {
  if ((M - M.transpose()).cwiseAbs().maxCoeff() > 1e-12 * std::max(1.0, M.cwiseAbs().maxCoeff()))
    return false;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(M);
  return es.eigenvalues().minCoeff() > -1e-10 * std::max(1.0, es.eigenvalues().maxCoeff());
}

}  // namespace

TEST_CASE("gaussian identity independence reduces to ordinary least squares") {
  Layout L;
  L.subjects_per_sequence = 8;
  const auto data = testing::gaussian_data(L, 1, 1.5, 0.4);
  auto spec = testing::parametric_spec(testing::gaussian(), CorrelationStructure::independence);
  const auto bundle = build_design(data, spec);
  const Eigen::VectorXd expected = ols(bundle);

  auto model = SemiparametricGee::create(bundle, spec);
  const FitState start = model->initialize();
  CHECK((start.beta - expected).cwiseAbs().maxCoeff() < 1e-10);
  CHECK(start.correlation.alpha() == 0.0);
  CHECK(start.phi == 1.0);

  const FitResult res = model->fit();
  CHECK(res.converged);
  CHECK((res.state.beta - expected).cwiseAbs().maxCoeff() < 1e-10);
  CHECK(testing::max_score(res) < 1e-6);

  // the degenerate cycle equals a lone beta solve
  FitState lone = model->initialize();
  model->solve_beta(lone);
  CHECK((lone.beta - res.state.beta).cwiseAbs().maxCoeff() < 1e-12);

  // starting at the solution leaves it unchanged
  FitState at = res.state;
  model->solve_beta(at);
  CHECK((at.beta - res.state.beta).cwiseAbs().maxCoeff() < 1e-13);
}

TEST_CASE("poisson intercept-only start is the log of the mean") {
  Layout L;
  L.subjects_per_sequence = 5;
  const auto data = testing::poisson_data(L, 4);
  auto spec = testing::parametric_spec(testing::poisson(), CorrelationStructure::ar1);
  spec.terms = {Term(Term::Kind::intercept)};
  auto model = SemiparametricGee::create(build_design(data, spec), spec);
  const FitState s = model->initialize();
  const double ybar = model->design().stacked_y().mean();
  CHECK(s.beta(0) == doctest::Approx(std::log(ybar)).epsilon(1e-12));
  for (const auto& t : s.smooth) CHECK(t.size() == 0);
}

TEST_CASE("dispersion cancels from the beta update") {
  Layout L = smooth_layout(6);
  const auto data = testing::gamma_data(L, 8, 4.0);
  auto spec = smooth_spec(testing::gamma_log(), CorrelationStructure::exchangeable);
  spec.tolerance = 1e-12;
  auto model = SemiparametricGee::create(build_design(data, spec), spec);
  FitState a = model->initialize();
  a.correlation = WorkingCorrelation(CorrelationStructure::exchangeable, 0.2);
  a.phi = 0.7;
  model->refresh(a);
  FitState b = a;
  b.phi = 7.0;
  model->solve_beta(a);
  model->solve_beta(b);
  CHECK((a.beta - b.beta).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("Fisher information equals the finite-difference Jacobian of U3 (gaussian)") {
  Layout L;
  L.subjects_per_sequence = 6;
  const auto data = testing::gaussian_data(L, 2, 1.0, 0.5);
  auto spec = testing::parametric_spec(testing::gaussian(), CorrelationStructure::ar1);
  auto model = SemiparametricGee::create(build_design(data, spec), spec);
  FitState s = model->initialize();
  s.correlation = WorkingCorrelation(CorrelationStructure::ar1, 0.3);
  s.phi = 2.0;
  model->refresh(s);
  const Eigen::Index p = s.beta.size();
  Eigen::MatrixXd jac(p, p);
  const double h = 1e-5;
  for (Eigen::Index k = 0; k < p; ++k) {
    FitState up = s, down = s;
    up.beta(k) += h;
    down.beta(k) -= h;
    model->refresh(up);
    model->refresh(down);
    jac.col(k) = (model->scores(up).beta - model->scores(down).beta) / (2 * h);
  }
  // naive = phi A^{-1} and dU/dbeta = -A / phi
  const Eigen::MatrixXd expected = -model->sandwich_covariance(s).naive.inverse();
  CHECK(((jac - expected).cwiseAbs().maxCoeff() / expected.cwiseAbs().maxCoeff()) < 1e-4);
}

TEST_CASE("fixing the time smooth is the same as subtracting it") {
  Layout L = smooth_layout(8);
  const auto data = testing::gaussian_data(L, 3, 0.5, 0.3);
  auto spec = smooth_spec(testing::gaussian(), CorrelationStructure::ar1);
  spec.tolerance = 1e-11;
  auto model = SemiparametricGee::create(build_design(data, spec), spec);
  REQUIRE(model->blocks().size() == 2);

  FitState start = model->initialize();
  Eigen::VectorXd theta(start.smooth[0].size());
  for (Eigen::Index k = 0; k < theta.size(); ++k) theta(k) = 0.2 * std::cos(1.0 + k);
  start.smooth[0] = theta;
  model->refresh(start);
  FitOptions frozen;
  frozen.start = start;
  frozen.frozen_blocks = {0};
  const FitResult a = model->fit(frozen);
  REQUIRE(a.converged);
  CHECK(a.state.smooth[0] == theta);

  // same data with the fixed curve removed, no time smooth
  std::vector<SubjectRecord> shifted = data.subjects();
  const auto& blocks = model->blocks();
  for (std::size_t i = 0; i < shifted.size(); ++i) {
    const Eigen::VectorXd f = blocks[0].design[i] * theta;
    for (std::size_t r = 0; r < shifted[i].observations.size(); ++r) shifted[i].observations[r].response -= f(r);
  }
  auto spec2 = spec;
  spec2.spline.time_smooth = false;
  const LongitudinalDataset data2(shifted);
  const FitResult b = fit(build_design(data2, spec2), spec2);
  REQUIRE(b.converged);
  CHECK((a.state.beta - b.state.beta).cwiseAbs().maxCoeff() < 1e-8);
  CHECK((a.state.smooth[1] - b.state.smooth[0]).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("subject order does not matter") {
  Layout L = smooth_layout(7);
  const auto data = testing::poisson_data(L, 5);
  auto spec = smooth_spec(testing::poisson(), CorrelationStructure::ar1);
  spec.tolerance = 1e-12;
  const FitResult a = fit(build_design(data, spec), spec);
  auto subjects = data.subjects();
  std::mt19937_64 rng(1);
  std::shuffle(subjects.begin(), subjects.end(), rng);
  const FitResult b = fit(build_design(LongitudinalDataset(subjects), spec), spec);
  REQUIRE(a.converged);
  REQUIRE(b.converged);
  CHECK((a.state.beta - b.state.beta).cwiseAbs().maxCoeff() < 1e-10);
  CHECK(testing::max_score(a) < 1e-6);
}

TEST_CASE("time smooth block is the weighted projection of partial residuals") {
  Layout L = smooth_layout(10);
  L.carry_effect = [](double) { return 0.0; };
  const auto data = testing::gaussian_data(L, 6, 0.8);
  auto spec = smooth_spec(testing::gaussian(), CorrelationStructure::independence);
  auto model = SemiparametricGee::create(build_design(data, spec), spec);
  FitState s = model->initialize();
  s.beta << L.intercept, L.period[1], L.period[2], L.treatment[1];
  model->refresh(s);
  model->solve_spline_block(s, 0);

  const auto& bundle = model->design();
  const auto N = bundle.observation_count();
  const Eigen::Index q = model->blocks()[0].dimension();
  Eigen::MatrixXd S(N, q);
  Eigen::VectorXd partial(N);
  Eigen::Index row = 0;
  for (std::size_t i = 0; i < bundle.subjects.size(); ++i) {
    const auto& d = bundle.subjects[i];
    S.middleRows(row, d.rows()) = model->blocks()[0].design[i];
    partial.segment(row, d.rows()) = d.y - d.X * s.beta;
    row += d.rows();
  }
  const Eigen::VectorXd expected = (S.transpose() * S).ldlt().solve(S.transpose() * partial);
  CHECK((s.smooth[0] - expected).cwiseAbs().maxCoeff() < 1e-10);

  // centring: the fitted curve sums to zero over the observed times
  CHECK(std::abs((S * s.smooth[0]).sum()) < 1e-9);
}

TEST_CASE("a design without carried periods has an inactive carry-over block") {
  Layout L;
  L.sequences = {"A", "B"};
  L.subjects_per_sequence = 6;
  const auto data = testing::gaussian_data(L, 7, 1.0);
  ModelSpec spec;
  spec.family = testing::gaussian();
  spec.correlation = CorrelationStructure::exchangeable;
  spec.terms = {Term(Term::Kind::intercept), Term(Term::Kind::treatment)};
  spec.spline.basis_size = 4;
  const FitResult res = fit(build_design(data, spec), spec);
  REQUIRE(res.model->blocks().size() == 2);
  CHECK_FALSE(res.model->blocks()[1].active());
  CHECK(res.scores.smooth[1].size() == 0);
  CHECK(res.smooth_coefficients(1).isZero());
  CHECK(res.converged);
}

TEST_CASE("rank-deficient designs name the dependent columns") {
  std::vector<SubjectRecord> subjects;
  for (int i = 0; i < 4; ++i) {
    SubjectRecord s;
    s.id = std::to_string(i);
    s.sequence = split_sequence(i % 2 ? "AB" : "BA");
    for (int j = 1; j <= 2; ++j)
      for (int k = 0; k < 3; ++k) {
        Observation o;
        o.period = j;
        o.time = k;
        o.treatment = s.sequence[j - 1];
        o.response = i + j + 0.1 * k;
        o.covariates["dup"] = j == 2 ? 1.0 : 0.0;
        s.observations.push_back(o);
      }
    subjects.push_back(s);
  }
  const LongitudinalDataset data(subjects);
  auto spec = testing::parametric_spec(testing::gaussian(), CorrelationStructure::independence);
  spec.terms.push_back(Term::parse("dup"));
  auto model = SemiparametricGee::create(build_design(data, spec), spec);
  CHECK_THROWS_WITH_AS(model->initialize(), doctest::Contains("dup"), SingularityError);
}

TEST_CASE("negative counts are rejected at initialisation") {
  Layout L;
  L.subjects_per_sequence = 2;
  auto data = testing::gaussian_data(L, 1, 3.0);
  auto spec = testing::parametric_spec(testing::poisson(), CorrelationStructure::independence);
  CHECK_THROWS_AS(fit(build_design(data, spec), spec), DomainError);
}

TEST_CASE("max_iterations = 0 reports the initial values") {
  Layout L = smooth_layout(4);
  const auto data = testing::gaussian_data(L, 9, 1.0);
  auto spec = smooth_spec(testing::gaussian(), CorrelationStructure::ar1);
  spec.max_iterations = 0;
  const FitResult res = fit(build_design(data, spec), spec);
  CHECK_FALSE(res.converged);
  CHECK(res.iterations == 0);
  CHECK(res.trace.empty());
  CHECK(res.state.smooth[0].isZero());
}

TEST_CASE("pure backfitting reaches the same solution as the joint step") {
  Layout L = smooth_layout(10);
  const auto data = testing::gaussian_data(L, 10, 0.6, 0.4);
  auto spec = smooth_spec(testing::gaussian(), CorrelationStructure::ar1);
  spec.tolerance = 1e-10;
  spec.max_iterations = 5000;
  auto model = SemiparametricGee::create(build_design(data, spec), spec);
  FitOptions pure;
  pure.joint_step = false;
  const FitResult a = model->fit();
  const FitResult b = model->fit(pure);
  REQUIRE(a.converged);
  REQUIRE(b.converged);
  CHECK(a.iterations < b.iterations);
  CHECK((a.state.beta - b.state.beta).cwiseAbs().maxCoeff() < 1e-7);
  CHECK(a.state.correlation.alpha() == doctest::Approx(b.state.correlation.alpha()).epsilon(1e-7));
}

TEST_CASE("covariances are symmetric and positive semidefinite") {
  for (auto corr : {CorrelationStructure::independence, CorrelationStructure::exchangeable,
                    CorrelationStructure::ar1}) {
    Layout L = smooth_layout(9);
    const auto data = testing::poisson_data(L, 11);
    auto spec = smooth_spec(testing::poisson(), corr);
    const FitResult res = fit(build_design(data, spec), spec);
    REQUIRE(res.converged);
    CHECK(testing::max_score(res) < 1e-6);
    CHECK(symmetric_psd(res.joint.robust));
    CHECK(symmetric_psd(res.joint.naive));
    CHECK(symmetric_psd(res.robust_covariance));
    CHECK(res.robust_covariance.rows() == 4);
  }
}

TEST_CASE("smooth curves carry sandwich bands") {
  Layout L = smooth_layout(10);
  const auto data = testing::gaussian_data(L, 12, 0.5);
  auto spec = smooth_spec(testing::gaussian(), CorrelationStructure::ar1);
  const FitResult res = fit(build_design(data, spec), spec);
  const auto curve = res.smooth_curve(0);
  REQUIRE(curve.time.size() == 101);
  CHECK(curve.time.front() == 0.0);
  CHECK(curve.time.back() == 6.0);
  for (std::size_t k = 0; k < curve.time.size(); ++k) {
    CHECK(curve.lower[k] <= curve.value[k]);
    CHECK(curve.value[k] <= curve.upper[k]);
    CHECK(curve.value[k] == doctest::Approx(res.smooth_function(0)(curve.time[k])).epsilon(1e-10));
  }
  CHECK(res.model->blocks()[1].label == "carry A");
}

TEST_CASE("Wald rows") {
  const auto row = wald_row("treatment C", -5.95, 3.60);
  CHECK(std::round(row.wald * 100.0) / 100.0 == doctest::Approx(2.73));
  const auto zero = wald_row("x", 0.0, 1.0);
  CHECK(zero.wald == 0.0);
  CHECK(zero.p_value == 1.0);

  // chi-square(1) CDF oracle: P(X <= x) = integral_0^sqrt(x) 2 phi(u) du by Simpson's rule
  auto cdf = [](double x) {
    const int n = 2000;
    const double b = std::sqrt(x), h = b / n;
    auto f = [](double u) { return 2.0 * std::exp(-0.5 * u * u) / std::sqrt(2.0 * std::numbers::pi); };
    double s = f(0) + f(b);
    for (int k = 1; k < n; ++k) s += (k % 2 ? 4.0 : 2.0) * f(k * h);
    return s * h / 3.0;
  };
  for (double x : {0.5, 2.73, 3.841, 10.0}) CHECK(stats::chi2_1_sf(x) == doctest::Approx(1.0 - cdf(x)).epsilon(1e-9));
  const auto crit = wald_row("y", std::sqrt(3.841), 1.0);
  CHECK(crit.p_value == doctest::Approx(0.050).epsilon(0.01));
}

TEST_CASE("normal distribution helpers against numerical integration") {
  // Phi(x) = 1/2 + integral_0^x phi(u) du by Simpson's rule
  auto cdf = [](double x) {
    const int n = 4000;
    const double h = x / n;
    auto f = [](double u) { return std::exp(-0.5 * u * u) / std::sqrt(2.0 * std::numbers::pi); };
    double s = f(0) + f(x);
    for (int k = 1; k < n; ++k) s += (k % 2 ? 4.0 : 2.0) * f(k * h);
    return 0.5 + s * h / 3.0;
  };
  for (double x : {-3.5, -1.96, -0.3, 0.0, 0.7, 2.5}) CHECK(stats::normal_cdf(x) == doctest::Approx(cdf(x)).epsilon(1e-12));
  for (double p : {1e-8, 0.001, 0.025, 0.3, 0.5, 0.9, 0.975, 0.999999}) {
    const double x = stats::normal_quantile(p);
    CHECK(cdf(x) == doctest::Approx(p).epsilon(1e-10));
  }
  CHECK(stats::normal_quantile(0.975) == doctest::Approx(1.959963984540054).epsilon(1e-14));
}

TEST_CASE("robust and naive standard errors agree under a correct model") {
  Layout L;
  L.subjects_per_sequence = 100;
  const auto data = testing::gaussian_data(L, 13, 1.0);
  auto spec = testing::parametric_spec(testing::gaussian(), CorrelationStructure::independence);
  const FitResult res = fit(build_design(data, spec), spec);
  for (Eigen::Index k = 0; k < res.state.beta.size(); ++k) {
    const double ratio = std::sqrt(res.robust_covariance(k, k) / res.naive_covariance(k, k));
    CHECK(ratio > 0.85);
    CHECK(ratio < 1.15);
  }
}

TEST_CASE("robust intervals stay calibrated under a misspecified working correlation") {
  Layout L;
  L.subjects_per_sequence = 20;
  auto spec = testing::parametric_spec(testing::gaussian(), CorrelationStructure::independence);
  const double z = stats::normal_quantile(0.975);
  int hits = 0, total = 0;
  for (int r = 0; r < 500; ++r) {
    const auto data = testing::gaussian_data(L, 1000 + r, 1.0, 0.6);
    const FitResult res = fit(build_design(data, spec), spec);
    const Eigen::VectorXd se = res.standard_errors();
    // treatment effect
    hits += std::abs(res.state.beta(2) - L.treatment[1]) <= z * se(2);
    ++total;
  }
  const double coverage = static_cast<double>(hits) / total;
  CHECK(coverage >= 0.92);
  CHECK(coverage <= 0.97);
}

TEST_CASE("poisson estimates fall within three sandwich errors") {
  Layout L;
  L.subjects_per_sequence = 50;
  auto spec = testing::parametric_spec(testing::poisson(), CorrelationStructure::ar1);
  int inside = 0, total = 0;
  const std::vector<double> truth{L.intercept, L.period[1], L.treatment[1]};
  for (int r = 0; r < 200; ++r) {
    const auto data = testing::poisson_data(L, 5000 + r);
    const FitResult res = fit(build_design(data, spec), spec);
    REQUIRE(res.converged);
    const Eigen::VectorXd se = res.standard_errors();
    for (int k = 0; k < 3; ++k, ++total) inside += std::abs(res.state.beta(k) - truth[k]) <= 3.0 * se(k);
  }
  CHECK(inside >= 0.99 * total);
}

TEST_CASE("null time smooth shrinks with n and stays inside its bands") {
  double previous = INFINITY;
  for (int per_sequence : {10, 50}) {
    Layout L = smooth_layout(per_sequence);
    L.time_effect = [](double) { return 0.0; };
    L.carry_effect = [](double) { return 0.0; };
    L.times.clear();
    for (int k = 0; k < 15; ++k) L.times.push_back(6.0 * k / 14.0);
    const auto data = testing::gaussian_data(L, 77 + per_sequence, 0.5);
    auto spec = smooth_spec(testing::gaussian(), CorrelationStructure::independence);
    spec.carryover.smooth = false;
    const FitResult res = fit(build_design(data, spec), spec);
    const double size = res.smooth_coefficients(0).cwiseAbs().maxCoeff();
    CHECK(size < previous);
    previous = size;
  }
  CHECK(previous < 0.1);

  double covered = 0.0;
  const int reps = 60;
  for (int r = 0; r < reps; ++r) {
    Layout L = smooth_layout(15);
    L.time_effect = [](double) { return 0.0; };
    L.carry_effect = [](double) { return 0.0; };
    const auto data = testing::gaussian_data(L, 300 + r, 1.0, 0.3);
    auto spec = smooth_spec(testing::gaussian(), CorrelationStructure::ar1);
    const FitResult res = fit(build_design(data, spec), spec);
    const auto curve = res.smooth_curve(0, 51);
    int in = 0;
    for (std::size_t k = 0; k < curve.time.size(); ++k) in += curve.lower[k] <= 0.0 && 0.0 <= curve.upper[k];
    covered += static_cast<double>(in) / curve.time.size();
  }
  CHECK(covered / reps >= 0.9);
}
