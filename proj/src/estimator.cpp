#include "sgee/estimator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <sstream>

#include "sgee/errors.hpp"
#include "sgee/stats.hpp"

namespace sgee {

namespace {

constexpr int kInnerIterations = 50;
constexpr int kMaxHalvings = 20;
constexpr int kDampAfter = 50;
constexpr double kPivotFloor = 1e-12;

/// Solves info * x = rhs for a symmetric PSD information matrix after
/// unit-diagonal scaling; throws SingularityError on a (near) zero pivot.
Eigen::VectorXd solve_information(const Eigen::MatrixXd& info, const Eigen::VectorXd& rhs,
                                  const std::string& what) {
  const Eigen::Index q = info.rows();
  Eigen::VectorXd scale(q);
  for (Eigen::Index k = 0; k < q; ++k) {
    if (!(info(k, k) > 0.0))
      throw SingularityError(what + ": Fisher information is singular (column " +
                             std::to_string(k) + " carries no information)");
    scale(k) = 1.0 / std::sqrt(info(k, k));
  }
  const Eigen::MatrixXd scaled = scale.asDiagonal() * info * scale.asDiagonal();
  Eigen::LDLT<Eigen::MatrixXd> ldlt(scaled);
  if (ldlt.info() != Eigen::Success || !(ldlt.vectorD().minCoeff() > kPivotFloor))
    throw SingularityError(what + ": Fisher information is singular");
  return scale.asDiagonal() * ldlt.solve(scale.asDiagonal() * rhs);
}

Eigen::MatrixXd inverse_information(const Eigen::MatrixXd& info, const std::string& what) {
  const Eigen::Index q = info.rows();
  Eigen::MatrixXd out(q, q);
  // Column-by-column through the same guarded solver.
  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(q, q);
  for (Eigen::Index k = 0; k < q; ++k) out.col(k) = solve_information(info, I.col(k), what);
  return 0.5 * (out + out.transpose());
}

Eigen::VectorXd pack(const FitState& s) {
  Eigen::Index n = s.beta.size() + 1;
  for (const auto& t : s.smooth) n += t.size();
  Eigen::VectorXd out(n);
  Eigen::Index at = 0;
  out.segment(at, s.beta.size()) = s.beta;
  at += s.beta.size();
  for (const auto& t : s.smooth) {
    out.segment(at, t.size()) = t;
    at += t.size();
  }
  out(at) = s.correlation.alpha();
  return out;
}

double max_relative_change(const Eigen::VectorXd& before, const Eigen::VectorXd& after) {
  double worst = 0.0;
  for (Eigen::Index k = 0; k < before.size(); ++k)
    worst = std::max(worst, std::abs(after(k) - before(k)) / std::max(1.0, std::abs(before(k))));
  return worst;
}

double start_mean(const Family& family, double y) {
  switch (family.kind) {
    case FamilyKind::gaussian: return y;
    case FamilyKind::poisson:
      if (y < 0.0) throw DomainError("poisson response " + std::to_string(y) + " is negative");
      return y + 0.1;
    case FamilyKind::gamma:
      if (!(y > 0.0)) throw DomainError("gamma response " + std::to_string(y) + " is not positive");
      return y;
    case FamilyKind::binomial:
      if (y < 0.0 || y > 1.0)
        throw DomainError("binomial response " + std::to_string(y) + " outside [0, 1]");
      return (y + 0.5) / 2.0;
  }
  return y;
}

template <typename Fn>
auto with_context(const std::string& context, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const DivergenceError& e) {
    throw DivergenceError(context + ": " + e.what());
  } catch (const SingularityError& e) {
    throw SingularityError(context + ": " + e.what());
  } catch (const DomainError& e) {
    throw DomainError(context + ": " + e.what());
  }
}

}  // namespace

double BlockScores::max_abs() const {
  double m = beta.size() ? beta.lpNorm<Eigen::Infinity>() : 0.0;
  for (const auto& s : smooth)
    if (s.size()) m = std::max(m, s.lpNorm<Eigen::Infinity>());
  return m;
}

std::shared_ptr<SemiparametricGee> SemiparametricGee::create(DesignBundle bundle, ModelSpec spec) {
  return std::shared_ptr<SemiparametricGee>(
      new SemiparametricGee(std::move(bundle), std::move(spec)));
}

SemiparametricGee::SemiparametricGee(DesignBundle bundle, ModelSpec spec)
    : bundle_(std::move(bundle)), spec_(std::move(spec)) {
  spec_.validate();
  if (bundle_.subjects.empty()) throw DesignError("design has no subjects");
  const bool carry_smooth = spec_.carryover.smooth && !bundle_.carried_treatments.empty();
  if (!spec_.spline.time_smooth && !carry_smooth) return;

  const int degree = spec_.spline.degree;
  const int m = spec_.spline.basis_size.value_or(std::max(bundle_.max_period_size(), degree + 1));
  basis_ = build_basis(bundle_.all_times(), degree, m);

  std::vector<Eigen::MatrixXd> evaluated;
  evaluated.reserve(bundle_.subjects.size());
  for (const auto& s : bundle_.subjects) evaluated.push_back(basis_->evaluate(s.time));

  if (spec_.spline.time_smooth) {
    SmoothBlock block;
    block.kind = SmoothBlock::Kind::time;
    block.label = "time";
    Eigen::VectorXd means = Eigen::VectorXd::Zero(m);
    for (const auto& S : evaluated) means += S.colwise().sum().transpose();
    means /= static_cast<double>(bundle_.observation_count());
    // Null space of means^T: the trailing m - 1 columns of Q in means = QR.
    const Eigen::MatrixXd column = means;
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(column);
    const Eigen::MatrixXd Q = qr.householderQ() * Eigen::MatrixXd::Identity(m, m);
    block.constraint = Q.rightCols(m - 1);
    for (const auto& S : evaluated) block.design.push_back(S * block.constraint);
    blocks_.push_back(std::move(block));
  }

  if (carry_smooth) {
    for (std::size_t c = 0; c < bundle_.carried_treatments.size(); ++c) {
      SmoothBlock block;
      block.kind = SmoothBlock::Kind::carryover;
      block.carry_index = c;
      block.label = "carry " + bundle_.carried_treatments[c];
      std::vector<Eigen::MatrixXd> raw;
      std::vector<bool> touched(m, false);
      for (std::size_t i = 0; i < evaluated.size(); ++i) {
        raw.push_back(bundle_.subjects[i].carry[c].asDiagonal() * evaluated[i]);
        for (Eigen::Index b = 0; b < m; ++b)
          if (raw.back().col(b).cwiseAbs().maxCoeff() > 0.0) touched[b] = true;
      }
      const auto q = std::count(touched.begin(), touched.end(), true);
      block.constraint = Eigen::MatrixXd::Zero(m, q);
      for (Eigen::Index b = 0, k = 0; b < m; ++b)
        if (touched[b]) block.constraint(b, k++) = 1.0;
      for (const auto& D : raw) block.design.push_back(D * block.constraint);
      blocks_.push_back(std::move(block));
    }
  }
}

std::vector<std::string> SemiparametricGee::joint_labels() const {
  std::vector<std::string> out = bundle_.column_labels;
  for (const auto& b : blocks_)
    for (Eigen::Index k = 0; k < b.dimension(); ++k)
      out.push_back(b.label + "[" + std::to_string(k + 1) + "]");
  return out;
}

Eigen::Index SemiparametricGee::joint_dimension() const {
  Eigen::Index n = bundle_.columns();
  for (const auto& b : blocks_) n += b.dimension();
  return n;
}

bool SemiparametricGee::try_refresh(FitState& state) const {
  const auto n = bundle_.subjects.size();
  state.eta.resize(n);
  state.mu.resize(n);
  state.dmu.resize(n);
  state.variance.resize(n);
  const Family& family = spec_.family;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& s = bundle_.subjects[i];
    Eigen::VectorXd eta = s.X * state.beta + s.offset;
    for (std::size_t b = 0; b < blocks_.size(); ++b)
      if (blocks_[b].active()) eta.noalias() += blocks_[b].design[i] * state.smooth[b];
    auto& mu = state.mu[i];
    auto& dmu = state.dmu[i];
    auto& var = state.variance[i];
    mu.resize(eta.size());
    dmu.resize(eta.size());
    var.resize(eta.size());
    for (Eigen::Index r = 0; r < eta.size(); ++r) {
      mu(r) = family.inverse_link(eta(r));
      if (!family.valid_mean(mu(r))) return false;
      dmu(r) = family.mu_eta(eta(r));
      var(r) = family.variance(mu(r));
      if (!(var(r) > 0.0) || !std::isfinite(dmu(r))) return false;
    }
    state.eta[i] = std::move(eta);
  }
  return true;
}

void SemiparametricGee::refresh(FitState& state) const {
  if (!try_refresh(state))
    throw DomainError("fitted mean outside the support of the " + spec_.family.name() +
                      " family");
}

template <typename DesignOf>
SemiparametricGee::Normal SemiparametricGee::accumulate(const FitState& state, Eigen::Index q,
                                                        DesignOf design_of) const {
  Normal out{Eigen::MatrixXd::Zero(q, q), Eigen::VectorXd::Zero(q)};
  for (std::size_t i = 0; i < bundle_.subjects.size(); ++i) {
    const Eigen::VectorXd sd = state.variance[i].cwiseSqrt().cwiseInverse();
    const Eigen::MatrixXd G = sd.cwiseProduct(state.dmu[i]).asDiagonal() * design_of(i);
    const Eigen::MatrixXd RG = state.correlation.solve(G);
    out.info.noalias() += G.transpose() * RG;
    out.score.noalias() +=
        RG.transpose() * sd.cwiseProduct(bundle_.subjects[i].y - state.mu[i]);
  }
  const double phi = state.phi > 0.0 ? state.phi : 1.0;
  out.info /= phi;
  out.score /= phi;
  return out;
}

template <typename Assemble, typename Apply>
Eigen::VectorXd SemiparametricGee::scoring_loop(FitState& state, Eigen::VectorXd theta,
                                                Assemble assemble, Apply apply,
                                                const std::string& what) const {
  // A step is accepted when the mean stays in the family support and the
  // Newton decrement U' I^{-1} U does not grow; otherwise it is halved. When
  // no halving helps, the expected information is a poor model of the score
  // (misspecified mean, strong working correlation) and a damped Newton step
  // on |U| with a finite-difference Jacobian is tried instead.
  const double score_tol = 1e-2 * spec_.tolerance;
  ScoringStep current = assemble(state, theta);
  for (int it = 0; it < kInnerIterations; ++it) {
    if (!current.step.allFinite() || !std::isfinite(current.merit))
      throw DivergenceError(what + ": non-finite score at inner iteration " + std::to_string(it));
    if (current.score_norm < score_tol) break;
    const Eigen::VectorXd start = theta;
    bool accepted = false;
    bool inside = false;
    ScoringStep next;
    auto search = [&](const Eigen::VectorXd& direction, auto&& better) {
      double scale = 1.0;
      for (int h = 0; h <= kMaxHalvings; ++h, scale *= 0.5) {
        theta = start + scale * direction;
        apply(state, theta);
        if (!try_refresh(state)) continue;
        inside = true;
        next = assemble(state, theta);
        if (next.step.allFinite() && (better(next) || next.score_norm < score_tol)) return true;
      }
      return false;
    };
    accepted = search(current.step, [&](const ScoringStep& n) { return n.merit <= current.merit; });
    if (!accepted && inside) {
      const Eigen::VectorXd direction = newton_direction(state, start, current.score, assemble, apply);
      if (direction.allFinite())
        accepted = search(direction, [&](const ScoringStep& n) { return n.score.norm() < current.score.norm(); });
    }
    if (!accepted) {
      theta = start;
      apply(state, theta);
      refresh(state);
      if (!inside)
        throw DivergenceError(what + ": step leaves the family support after " +
                              std::to_string(kMaxHalvings) + " halvings");
      break;  // no descent from here; leave it to the outer cycle
    }
    const bool tiny = (theta - start).lpNorm<Eigen::Infinity>() <=
                      1e-13 * (1.0 + theta.lpNorm<Eigen::Infinity>());
    current = std::move(next);
    if (tiny) break;
  }
  return theta;
}

template <typename Assemble, typename Apply>
Eigen::VectorXd SemiparametricGee::newton_direction(FitState& state, const Eigen::VectorXd& at,
                                                    const Eigen::VectorXd& score, Assemble assemble,
                                                    Apply apply) const {
  const Eigen::Index q = at.size();
  Eigen::MatrixXd jacobian(q, q);
  const Eigen::VectorXd nan = Eigen::VectorXd::Constant(q, std::numeric_limits<double>::quiet_NaN());
  for (Eigen::Index k = 0; k < q; ++k) {
    Eigen::VectorXd theta = at;
    const double h = 1e-7 * std::max(1.0, std::abs(at(k)));
    theta(k) += h;
    apply(state, theta);
    if (!try_refresh(state)) return nan;
    jacobian.col(k) = (assemble(state, theta).score - score) / h;
  }
  apply(state, at);
  refresh(state);
  Eigen::FullPivLU<Eigen::MatrixXd> lu(jacobian);
  if (!jacobian.allFinite() || !lu.isInvertible()) return nan;
  return -lu.solve(score);
}

template <typename DesignOf, typename Apply>
Eigen::VectorXd SemiparametricGee::fisher_scoring(FitState& state, Eigen::VectorXd theta,
                                                  DesignOf design_of, Apply apply,
                                                  const std::string& what) const {
  const Eigen::Index q = theta.size();
  auto assemble = [&](const FitState& s, const Eigen::VectorXd&) {
    const Normal ne = accumulate(s, q, design_of);
    ScoringStep out;
    out.score_norm = ne.score.lpNorm<Eigen::Infinity>();
    if (!ne.score.allFinite() || !ne.info.allFinite()) {
      out.step = Eigen::VectorXd::Constant(q, std::numeric_limits<double>::quiet_NaN());
      out.merit = out.step(0);
      return out;
    }
    out.step = solve_information(ne.info, ne.score, what);
    out.merit = ne.score.dot(out.step);
    out.score = ne.score;
    return out;
  };
  return scoring_loop(state, std::move(theta), assemble, apply, what);
}

FitState SemiparametricGee::initialize() const {
  const Eigen::Index p = bundle_.columns();
  const Eigen::MatrixXd X = bundle_.stacked_X();
  if (p == 0) throw DesignError("model has no parametric columns");
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
  if (qr.rank() < p) {
    std::vector<std::string> dependent;
    Eigen::Index rank = 0;
    for (Eigen::Index k = 0; k < p; ++k) {
      Eigen::ColPivHouseholderQR<Eigen::MatrixXd> partial(X.leftCols(k + 1));
      if (partial.rank() > rank) ++rank;
      else dependent.push_back(bundle_.column_labels[k]);
    }
    std::string names;
    for (const auto& d : dependent) names += (names.empty() ? "" : ", ") + d;
    throw SingularityError("design matrix has rank " + std::to_string(qr.rank()) + " < " +
                           std::to_string(p) + "; linearly dependent columns: " + names);
  }

  // One weighted least-squares pass on g(mu_start) gives the scoring start.
  const Family& family = spec_.family;
  Eigen::MatrixXd info = Eigen::MatrixXd::Zero(p, p);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(p);
  for (const auto& s : bundle_.subjects) {
    for (Eigen::Index r = 0; r < s.rows(); ++r) {
      const double mu0 = start_mean(family, s.y(r));
      const double eta0 = family.link_fn(mu0);
      const double d = family.mu_eta(eta0);
      const double w = d * d / family.variance(mu0);
      info.noalias() += w * s.X.row(r).transpose() * s.X.row(r);
      rhs.noalias() += w * (eta0 - s.offset(r)) * s.X.row(r).transpose();
    }
  }

  FitState state;
  state.beta = solve_information(info, rhs, "initial beta");
  for (const auto& b : blocks_) state.smooth.push_back(Eigen::VectorXd::Zero(b.dimension()));
  state.correlation = WorkingCorrelation::independence();
  state.phi = 1.0;
  if (!try_refresh(state))
    throw DivergenceError("initial values put the mean outside the " + family.name() +
                          " support");
  solve_beta(state);
  state.correlation = WorkingCorrelation(spec_.correlation, 0.0);
  state.phi = 1.0;
  state.iteration = 0;
  refresh(state);
  return state;
}

Eigen::VectorXd SemiparametricGee::solve_spline_block(FitState& state, std::size_t block) const {
  const SmoothBlock& b = blocks_.at(block);
  if (!b.active()) return state.smooth[block];
  state.smooth[block] = fisher_scoring(
      state, state.smooth[block], [&](std::size_t i) -> const Eigen::MatrixXd& { return b.design[i]; },
      [block](FitState& s, const Eigen::VectorXd& theta) { s.smooth[block] = theta; },
      b.label + " smooth");
  return state.smooth[block];
}

Eigen::VectorXd SemiparametricGee::solve_beta(FitState& state) const {
  // beta <- (sum X'WX)^{-1} sum X'W z with W = N V^{-1} N and working
  // response z = X beta + N^{-1} (y - mu).
  const Eigen::Index p = bundle_.columns();
  auto assemble = [&](const FitState& s, const Eigen::VectorXd& beta) {
    Eigen::MatrixXd XtWX = Eigen::MatrixXd::Zero(p, p);
    Eigen::VectorXd XtWz = Eigen::VectorXd::Zero(p);
    Eigen::VectorXd score = Eigen::VectorXd::Zero(p);
    ScoringStep out;
    for (std::size_t i = 0; i < bundle_.subjects.size(); ++i) {
      const auto& d = bundle_.subjects[i];
      const Eigen::VectorXd& dmu = s.dmu[i];
      const Eigen::VectorXd z = d.X * beta + (d.y - s.mu[i]).cwiseQuotient(dmu);
      if (!z.allFinite()) {
        out.step = Eigen::VectorXd::Constant(p, std::numeric_limits<double>::quiet_NaN());
        out.merit = out.step(0);
        return out;
      }
      const Eigen::VectorXd sd = s.variance[i].cwiseSqrt().cwiseInverse();
      const Eigen::VectorXd nd = sd.cwiseProduct(dmu);
      const Eigen::MatrixXd G = nd.asDiagonal() * d.X;
      const Eigen::MatrixXd RG = s.correlation.solve(G);
      XtWX.noalias() += G.transpose() * RG;
      XtWz.noalias() += RG.transpose() * nd.cwiseProduct(z);
      score.noalias() += RG.transpose() * sd.cwiseProduct(d.y - s.mu[i]);
    }
    const double phi = s.phi > 0.0 ? s.phi : 1.0;
    out.step = solve_information(XtWX, XtWz, "beta") - beta;
    out.score = score / phi;
    out.score_norm = out.score.lpNorm<Eigen::Infinity>();
    out.merit = out.score.dot(out.step);
    return out;
  };
  state.beta = scoring_loop(
      state, state.beta, assemble, [](FitState& s, const Eigen::VectorXd& b) { s.beta = b; }, "beta");
  return state.beta;
}

void SemiparametricGee::solve_joint(FitState& state, const std::vector<std::size_t>& frozen_blocks) const {
  const std::set<std::size_t> frozen(frozen_blocks.begin(), frozen_blocks.end());
  std::vector<std::size_t> free;
  Eigen::Index K = bundle_.columns();
  for (std::size_t b = 0; b < blocks_.size(); ++b)
    if (!frozen.count(b) && blocks_[b].active()) {
      free.push_back(b);
      K += blocks_[b].dimension();
    }
  if (free.empty()) {
    solve_beta(state);
    return;
  }
  std::vector<Eigen::MatrixXd> joint;
  joint.reserve(bundle_.subjects.size());
  for (std::size_t i = 0; i < bundle_.subjects.size(); ++i) {
    const auto& X = bundle_.subjects[i].X;
    Eigen::MatrixXd M(X.rows(), K);
    M.leftCols(X.cols()) = X;
    Eigen::Index col = X.cols();
    for (std::size_t b : free) {
      M.middleCols(col, blocks_[b].dimension()) = blocks_[b].design[i];
      col += blocks_[b].dimension();
    }
    joint.push_back(std::move(M));
  }
  Eigen::VectorXd theta(K);
  theta.head(bundle_.columns()) = state.beta;
  Eigen::Index col = bundle_.columns();
  for (std::size_t b : free) {
    theta.segment(col, blocks_[b].dimension()) = state.smooth[b];
    col += blocks_[b].dimension();
  }
  const Eigen::Index p = bundle_.columns();
  fisher_scoring(
      state, theta, [&](std::size_t i) -> const Eigen::MatrixXd& { return joint[i]; },
      [&](FitState& s, const Eigen::VectorXd& v) {
        s.beta = v.head(p);
        Eigen::Index at = p;
        for (std::size_t b : free) {
          s.smooth[b] = v.segment(at, blocks_[b].dimension());
          at += blocks_[b].dimension();
        }
      },
      "joint");
}

Eigen::VectorXd SemiparametricGee::pearson_residuals(const FitState& state) const {
  Eigen::VectorXd r(bundle_.observation_count());
  Eigen::Index at = 0;
  for (std::size_t i = 0; i < bundle_.subjects.size(); ++i) {
    const auto n = bundle_.subjects[i].rows();
    r.segment(at, n) = (bundle_.subjects[i].y - state.mu[i]).cwiseQuotient(state.variance[i].cwiseSqrt());
    at += n;
  }
  return r;
}

double SemiparametricGee::update_dispersion(FitState& state) const {
  state.phi = estimate_dispersion(pearson_residuals(state), static_cast<int>(bundle_.columns()));
  return state.phi;
}

AlphaUpdate SemiparametricGee::update_correlation(FitState& state, double damping) const {
  ResidualMomentSystem system;
  system.phi = state.phi;
  system.residuals.reserve(bundle_.subjects.size());
  for (std::size_t i = 0; i < bundle_.subjects.size(); ++i)
    system.residuals.push_back(
        (bundle_.subjects[i].y - state.mu[i]).cwiseQuotient(state.variance[i].cwiseSqrt()));
  AlphaUpdate update = update_alpha(system, spec_.correlation);
  if (damping < 1.0) {
    const double alpha = state.correlation.alpha() +
                         damping * (update.correlation.alpha() - state.correlation.alpha());
    update.correlation = WorkingCorrelation(spec_.correlation, alpha);
  }
  state.correlation = update.correlation;
  return update;
}

BlockScores SemiparametricGee::scores(const FitState& state) const {
  BlockScores out;
  out.beta = Eigen::VectorXd::Zero(bundle_.columns());
  for (const auto& b : blocks_) out.smooth.push_back(Eigen::VectorXd::Zero(b.dimension()));
  const double phi = state.phi > 0.0 ? state.phi : 1.0;
  for (std::size_t i = 0; i < bundle_.subjects.size(); ++i) {
    const auto& s = bundle_.subjects[i];
    const Eigen::VectorXd sd = state.variance[i].cwiseSqrt().cwiseInverse();
    const Eigen::VectorXd e = sd.cwiseProduct(s.y - state.mu[i]);
    const Eigen::VectorXd w = sd.cwiseProduct(state.dmu[i]).cwiseProduct(state.correlation.solve(e)) / phi;
    out.beta.noalias() += s.X.transpose() * w;
    for (std::size_t b = 0; b < blocks_.size(); ++b)
      if (blocks_[b].active()) out.smooth[b].noalias() += blocks_[b].design[i].transpose() * w;
  }
  return out;
}

CovariancePair SemiparametricGee::sandwich_covariance(const FitState& state) const {
  const Eigen::Index K = joint_dimension();
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(K, K);
  Eigen::MatrixXd B = Eigen::MatrixXd::Zero(K, K);
  for (std::size_t i = 0; i < bundle_.subjects.size(); ++i) {
    const auto& s = bundle_.subjects[i];
    Eigen::MatrixXd M(s.rows(), K);
    Eigen::Index col = 0;
    M.leftCols(s.X.cols()) = s.X;
    col += s.X.cols();
    for (const auto& b : blocks_) {
      M.middleCols(col, b.dimension()) = b.design[i];
      col += b.dimension();
    }
    const Eigen::VectorXd sd = state.variance[i].cwiseSqrt().cwiseInverse();
    const Eigen::MatrixXd G = sd.cwiseProduct(state.dmu[i]).asDiagonal() * M;
    const Eigen::MatrixXd RG = state.correlation.solve(G);
    A.noalias() += G.transpose() * RG;
    const Eigen::VectorXd u = RG.transpose() * sd.cwiseProduct(s.y - state.mu[i]);
    B.noalias() += u * u.transpose();
  }
  CovariancePair out;
  const Eigen::MatrixXd Ainv = inverse_information(A, "sandwich");
  out.robust = Ainv * B * Ainv;
  out.robust = 0.5 * (out.robust + out.robust.transpose());
  out.naive = state.phi * Ainv;
  return out;
}

FitResult SemiparametricGee::fit(const FitOptions& options) const {
  FitResult result;
  result.model = shared_from_this();
  result.labels = bundle_.column_labels;

  FitState state = options.start ? *options.start : initialize();
  refresh(state);
  const std::set<std::size_t> frozen(options.frozen_blocks.begin(), options.frozen_blocks.end());
  const bool estimate_alpha = spec_.correlation != CorrelationStructure::independence;

  auto free_score = [&](const BlockScores& sc) {
    double m = sc.beta.lpNorm<Eigen::Infinity>();
    for (std::size_t b = 0; b < sc.smooth.size(); ++b)
      if (!frozen.count(b) && sc.smooth[b].size())
        m = std::max(m, sc.smooth[b].lpNorm<Eigen::Infinity>());
    return m;
  };

  if (spec_.max_iterations == 0) result.warnings.push_back("max_iterations = 0: initial values only");

  for (int cycle = 1; cycle <= spec_.max_iterations; ++cycle) {
    const std::string context = "cycle " + std::to_string(cycle);
    const Eigen::VectorXd before = pack(state);
    IterationRecord record;
    record.cycle = cycle;
    with_context(context, [&] {
      for (std::size_t b = 0; b < blocks_.size(); ++b)
        if (!frozen.count(b)) solve_spline_block(state, b);
      solve_beta(state);
      if (options.joint_step) solve_joint(state, options.frozen_blocks);
      update_dispersion(state);
      if (estimate_alpha && state.phi > 0.0) {
        const auto update = update_correlation(state, cycle > kDampAfter ? 0.5 : 1.0);
        record.alpha_clipped = update.clipped;
        if (update.clipped)
          result.warnings.push_back(context + ": correlation estimate " +
                                    std::to_string(update.raw_alpha) +
                                    " clipped into the admissible range");
      }
      refresh(state);
    });
    state.iteration = cycle;

    const BlockScores sc = scores(state);
    record.max_change = max_relative_change(before, pack(state));
    record.beta_score = sc.beta.lpNorm<Eigen::Infinity>();
    for (std::size_t b = 0; b < sc.smooth.size(); ++b)
      if (sc.smooth[b].size())
        record.smooth_score = std::max(record.smooth_score, sc.smooth[b].lpNorm<Eigen::Infinity>());
    record.alpha = state.correlation.alpha();
    record.phi = state.phi;
    result.trace.push_back(record);
    if (record.max_change < spec_.tolerance && free_score(sc) < spec_.tolerance) {
      result.converged = true;
      break;
    }
  }

  result.iterations = state.iteration;
  result.scores = scores(state);
  if (!result.converged && spec_.max_iterations > 0)
    result.warnings.push_back("no convergence after " + std::to_string(spec_.max_iterations) +
                              " cycles");

  const Eigen::Index p = bundle_.columns();
  try {
    result.joint = sandwich_covariance(state);
    result.naive_covariance = result.joint.naive.topLeftCorner(p, p);
    result.robust_covariance = result.joint.robust.topLeftCorner(p, p);
  } catch (const SingularityError& e) {
    result.inference_error = e.what();
    const double nan = std::numeric_limits<double>::quiet_NaN();
    const Eigen::Index K = joint_dimension();
    result.joint.naive = result.joint.robust = Eigen::MatrixXd::Constant(K, K, nan);
    result.naive_covariance = result.robust_covariance = Eigen::MatrixXd::Constant(p, p, nan);
  }
  result.state = std::move(state);
  return result;
}

FitResult fit(const DesignBundle& bundle, const ModelSpec& spec, const FitOptions& options) {
  return SemiparametricGee::create(bundle, spec)->fit(options);
}

Eigen::VectorXd FitResult::standard_errors() const {
  return robust_covariance.diagonal().cwiseMax(0.0).cwiseSqrt();
}

Eigen::VectorXd FitResult::smooth_coefficients(std::size_t block) const {
  return model->blocks().at(block).constraint * state.smooth.at(block);
}

SmoothFunction<double> FitResult::smooth_function(std::size_t block) const {
  return SmoothFunction<double>(*model->basis(), smooth_coefficients(block));
}

SmoothCurve FitResult::smooth_curve(std::size_t block, int points, double level) const {
  const auto& b = model->blocks().at(block);
  const auto& basis = *model->basis();
  Eigen::Index offset = static_cast<Eigen::Index>(labels.size());
  for (std::size_t k = 0; k < block; ++k) offset += model->blocks()[k].dimension();
  const Eigen::MatrixXd cov = joint.robust.block(offset, offset, b.dimension(), b.dimension());
  const double z = stats::normal_quantile(0.5 * (1.0 + level));

  SmoothCurve curve;
  curve.label = b.label;
  for (int k = 0; k < points; ++k) {
    const double t = k + 1 == points ? basis.upper()
                                     : basis.lower() + (basis.upper() - basis.lower()) * k /
                                                           std::max(1, points - 1);
    const Eigen::VectorXd a = b.constraint.transpose() * basis.evaluate(t);
    const double value = a.dot(state.smooth[block]);
    const double se = std::sqrt(std::max(0.0, a.dot(cov * a)));
    curve.time.push_back(t);
    curve.value.push_back(value);
    curve.std_error.push_back(se);
    curve.lower.push_back(value - z * se);
    curve.upper.push_back(value + z * se);
  }
  return curve;
}

WaldRow wald_row(std::string label, double estimate, double std_error) {
  WaldRow row{std::move(label), estimate, std_error, 0.0, 1.0};
  if (estimate == 0.0) {
    row.wald = 0.0;
  } else if (std_error > 0.0) {
    row.wald = (estimate / std_error) * (estimate / std_error);
  } else {
    row.wald = std::numeric_limits<double>::infinity();
  }
  row.p_value = stats::chi2_1_sf(row.wald);
  return row;
}

std::vector<WaldRow> wald_table(const FitResult& result) {
  std::vector<WaldRow> rows;
  const Eigen::VectorXd se = result.standard_errors();
  for (std::size_t k = 0; k < result.labels.size(); ++k)
    rows.push_back(wald_row(result.labels[k], result.state.beta(k), se(k)));
  return rows;
}

}  // namespace sgee
