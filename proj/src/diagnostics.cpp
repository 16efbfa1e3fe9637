#include "sgee/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "sgee/errors.hpp"
#include "sgee/stats.hpp"

namespace sgee {

namespace {

Eigen::MatrixXd joint_design(const SemiparametricGee& model, std::size_t i) {
  const auto& s = model.design().subjects[i];
  Eigen::MatrixXd M(s.rows(), model.joint_dimension());
  M.leftCols(s.X.cols()) = s.X;
  Eigen::Index col = s.X.cols();
  for (const auto& b : model.blocks()) {
    M.middleCols(col, b.dimension()) = b.design[i];
    col += b.dimension();
  }
  return M;
}

Eigen::MatrixXd symmetric_sqrt(const Eigen::MatrixXd& W) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (W + W.transpose()));
  const Eigen::VectorXd root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

namespace {

// kernel: the mu-dependent part; full: kernel plus the log-density terms
// that involve only y and phi
struct QuasiParts {
  double kernel = 0.0;
  double full = 0.0;
};

QuasiParts quasi_parts(const FitResult& fit) {
  const auto& model = *fit.model;
  const double phi = fit.state.phi;
  QuasiParts q;
  double constant = 0.0;
  for (std::size_t i = 0; i < model.design().subjects.size(); ++i) {
    const Eigen::VectorXd& y = model.design().subjects[i].y;
    const Eigen::VectorXd& mu = fit.state.mu[i];
    switch (model.spec().family.kind) {
      case FamilyKind::gaussian:
        q.kernel -= (y - mu).squaredNorm() / (2.0 * phi);
        constant -= 0.5 * static_cast<double>(y.size()) * std::log(2.0 * std::numbers::pi * phi);
        break;
      case FamilyKind::poisson:
        for (Eigen::Index r = 0; r < y.size(); ++r) {
          q.kernel += (y(r) == 0.0 ? 0.0 : y(r) * std::log(mu(r))) - mu(r);
          constant -= std::lgamma(y(r) + 1.0);
        }
        break;
      case FamilyKind::gamma: {
        const double nu = 1.0 / phi;
        for (Eigen::Index r = 0; r < y.size(); ++r) {
          q.kernel -= (y(r) / mu(r) + std::log(mu(r))) / phi;
          constant += nu * std::log(nu) + (nu - 1.0) * std::log(y(r)) - std::lgamma(nu);
        }
        break;
      }
      case FamilyKind::binomial:
        throw Error("QIC is not reported for the binomial family");
    }
  }
  q.full = q.kernel + constant;
  return q;
}

}  // namespace

double quasi_likelihood(const FitResult& fit) { return quasi_parts(fit).full; }

QicResult qic(const FitResult& fit) {
  if (fit.inference_error) throw Error("QIC needs the robust covariance: " + *fit.inference_error);
  const auto& model = *fit.model;
  const Eigen::Index K = model.joint_dimension();
  Eigen::MatrixXd omega_inv = Eigen::MatrixXd::Zero(K, K);
  for (std::size_t i = 0; i < model.design().subjects.size(); ++i) {
    const Eigen::VectorXd w =
        fit.state.dmu[i].cwiseAbs2().cwiseQuotient(fit.state.variance[i]) / fit.state.phi;
    const Eigen::MatrixXd M = joint_design(model, i);
    omega_inv.noalias() += M.transpose() * w.asDiagonal() * M;
  }
  Eigen::FullPivLU<Eigen::MatrixXd> lu(omega_inv);
  if (!omega_inv.allFinite() || lu.rank() < K)
    throw Error("independence information matrix is singular; QIC undefined");

  QicResult out;
  const QuasiParts parts = quasi_parts(fit);
  out.quasi_likelihood = parts.full;
  out.kernel = parts.kernel;
  out.trace_penalty = (omega_inv * fit.joint.robust).trace();
  out.qic = -2.0 * out.quasi_likelihood + 2.0 * out.trace_penalty;
  return out;
}

std::vector<ResidualRecord> standardized_residuals(const SemiparametricGee& model,
                                                   const FitState& state) {
  const auto& subjects = model.design().subjects;
  const Eigen::Index p = model.design().columns();
  const double phi = state.phi > 0.0 ? state.phi : 1.0;

  std::vector<Eigen::MatrixXd> roots;
  roots.reserve(subjects.size());
  Eigen::MatrixXd info = Eigen::MatrixXd::Zero(p, p);
  for (std::size_t i = 0; i < subjects.size(); ++i) {
    const auto n = subjects[i].rows();
    // W = N V^{-1} N = diag(dmu/sd) R^{-1} diag(dmu/sd) / phi
    const Eigen::VectorXd g = state.dmu[i].cwiseQuotient(state.variance[i].cwiseSqrt());
    const Eigen::MatrixXd Rinv = state.correlation.solve(Eigen::MatrixXd::Identity(n, n));
    const Eigen::MatrixXd W = g.asDiagonal() * Rinv * g.asDiagonal() / phi;
    info.noalias() += subjects[i].X.transpose() * W * subjects[i].X;
    roots.push_back(symmetric_sqrt(W));
  }
  const Eigen::MatrixXd info_inv = info.ldlt().solve(Eigen::MatrixXd::Identity(p, p));

  std::vector<ResidualRecord> out;
  out.reserve(model.design().observation_count());
  for (std::size_t i = 0; i < subjects.size(); ++i) {
    const auto& s = subjects[i];
    const Eigen::MatrixXd WX = roots[i] * s.X;
    const Eigen::VectorXd h = (WX * info_inv).cwiseProduct(WX).rowwise().sum();
    const Eigen::VectorXd working = roots[i] * (s.y - state.mu[i]).cwiseQuotient(state.dmu[i]);
    for (Eigen::Index r = 0; r < s.rows(); ++r) {
      ResidualRecord rec;
      rec.subject = s.id;
      rec.period = s.index[r].first;
      rec.within = s.index[r].second;
      rec.working = working(r);
      rec.leverage = std::clamp(h(r), 0.0, 1.0);
      if (rec.leverage < 1.0 - 1e-12) rec.standardized = working(r) / (1.0 - std::sqrt(rec.leverage));
      out.push_back(std::move(rec));
    }
  }
  return out;
}

std::vector<ResidualRecord> standardized_residuals(const FitResult& fit) {
  return standardized_residuals(*fit.model, fit.state);
}

std::vector<double> defined_values(const std::vector<ResidualRecord>& residuals) {
  std::vector<double> out;
  out.reserve(residuals.size());
  for (const auto& r : residuals)
    if (r.standardized) out.push_back(*r.standardized);
  return out;
}

std::vector<double> normal_order_medians(std::size_t n) {
  std::vector<double> out(n);
  if (n == 0) return out;
  const double last = std::pow(0.5, 1.0 / static_cast<double>(n));
  for (std::size_t i = 1; i <= n; ++i) {
    double m;
    if (i == 1) m = 1.0 - last;
    else if (i == n) m = last;
    else m = (static_cast<double>(i) - 0.3175) / (static_cast<double>(n) + 0.365);
    out[i - 1] = stats::normal_quantile(m);
  }
  return out;
}

QqBand qq_band_data(std::vector<double> residuals, int n_sim, double level, std::uint64_t seed) {
  if (residuals.size() < 10) throw DomainError("QQ band needs at least 10 residuals");
  if (!(level > 0.0 && level < 1.0)) throw DomainError("QQ band level must lie in (0, 1)");
  if (n_sim < 2) throw DomainError("QQ band needs at least two simulated samples");
  const std::size_t n = residuals.size();
  std::sort(residuals.begin(), residuals.end());

  QqBand band;
  band.theoretical = normal_order_medians(n);
  band.sample = std::move(residuals);

  // draws(k, d): k-th order statistic of simulated sample d
  Eigen::MatrixXd draws(n, n_sim);
  std::vector<double> sample(n);
  for (int d = 0; d < n_sim; ++d) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(d)};
    std::mt19937_64 rng(seq);
    std::normal_distribution<double> normal;
    for (auto& v : sample) v = normal(rng);
    std::sort(sample.begin(), sample.end());
    for (std::size_t k = 0; k < n; ++k) draws(k, d) = sample[k];
  }
  const double lo = 0.5 * (1.0 - level);
  const double hi = 0.5 * (1.0 + level);
  std::vector<double> row(n_sim);
  band.lower.resize(n);
  band.upper.resize(n);
  for (std::size_t k = 0; k < n; ++k) {
    for (int d = 0; d < n_sim; ++d) row[d] = draws(k, d);
    std::sort(row.begin(), row.end());
    band.lower[k] = sorted_quantile(row, lo);
    band.upper[k] = sorted_quantile(row, hi);
  }
  return band;
}

DiagnosticsReport diagnose(const FitResult& fit, int n_sim, double level, std::uint64_t seed) {
  DiagnosticsReport report;
  if (fit.model->spec().family.kind != FamilyKind::binomial && !fit.inference_error)
    report.qic = qic(fit);
  report.residuals = standardized_residuals(fit);
  const auto values = defined_values(report.residuals);
  if (values.size() >= 10) report.qq = qq_band_data(values, n_sim, level, seed);
  return report;
}

}  // namespace sgee
