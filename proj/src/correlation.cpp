#include "sgee/correlation.hpp"

#include <algorithm>
#include <limits>
#include <sstream>

#include "sgee/errors.hpp"

namespace sgee {

namespace {

constexpr double kClipMargin = 1e-4;

}  // namespace

WorkingCorrelation::WorkingCorrelation(CorrelationStructure structure, double alpha)
    : structure_(structure), alpha_(structure == CorrelationStructure::independence ? 0.0 : alpha) {
  if (!std::isfinite(alpha_)) throw DomainError("correlation parameter is not finite");
}

std::pair<double, double> WorkingCorrelation::admissible_range(CorrelationStructure structure,
                                                               Eigen::Index max_size) {
  switch (structure) {
    case CorrelationStructure::independence: return {0.0, 0.0};
    case CorrelationStructure::exchangeable:
      return {max_size > 1 ? -1.0 / static_cast<double>(max_size - 1)
                           : -std::numeric_limits<double>::infinity(),
              1.0};
    case CorrelationStructure::ar1: return {-1.0, 1.0};
  }
  return {0.0, 0.0};
}

void WorkingCorrelation::check(Eigen::Index size) const {
  if (size < 1) throw DomainError("correlation matrix size must be positive");
  if (structure_ == CorrelationStructure::independence || size == 1) return;
  auto [lo, hi] = admissible_range(structure_, size);
  if (!(alpha_ > lo && alpha_ < hi)) {
    std::ostringstream os;
    os << to_string(structure_) << " correlation parameter " << alpha_ << " outside (" << lo
       << ", " << hi << ") for size " << size;
    throw DomainError(os.str());
  }
}

Eigen::MatrixXd WorkingCorrelation::solve(const Eigen::Ref<const Eigen::MatrixXd>& B) const {
  const Eigen::Index n = B.rows();
  switch (structure_) {
    case CorrelationStructure::independence: return B;
    case CorrelationStructure::exchangeable: {
      // R = (1 - a) I + a 11^T
      const double a = alpha_;
      const double c = a / (1.0 - a) / (1.0 + (static_cast<double>(n) - 1.0) * a);
      Eigen::MatrixXd out = B / (1.0 - a);
      out.rowwise() -= c * B.colwise().sum();
      return out;
    }
    case CorrelationStructure::ar1: {
      if (n == 1) return B;
      // R^{-1} = (1/(1-a^2)) tridiag(-a, [1, 1+a^2, ..., 1+a^2, 1], -a)
      const double a = alpha_;
      const double s = 1.0 / (1.0 - a * a);
      Eigen::MatrixXd out(n, B.cols());
      out.row(0) = s * (B.row(0) - a * B.row(1));
      out.row(n - 1) = s * (B.row(n - 1) - a * B.row(n - 2));
      for (Eigen::Index r = 1; r + 1 < n; ++r)
        out.row(r) = s * ((1.0 + a * a) * B.row(r) - a * (B.row(r - 1) + B.row(r + 1)));
      return out;
    }
  }
  return B;
}

std::vector<std::pair<Eigen::Index, Eigen::Index>> ResidualMomentSystem::pairs(
    CorrelationStructure structure, Eigen::Index size) {
  std::vector<std::pair<Eigen::Index, Eigen::Index>> out;
  if (structure == CorrelationStructure::exchangeable) {
    out.reserve(size * (size - 1) / 2);
    for (Eigen::Index a = 0; a < size; ++a)
      for (Eigen::Index b = a + 1; b < size; ++b) out.emplace_back(a, b);
  } else if (structure == CorrelationStructure::ar1) {
    for (Eigen::Index a = 0; a + 1 < size; ++a) out.emplace_back(a, a + 1);
  }
  return out;
}

Eigen::VectorXd ResidualMomentSystem::products(std::size_t subject,
                                               CorrelationStructure structure) const {
  const auto& r = residuals.at(subject);
  const auto ps = pairs(structure, r.size());
  Eigen::VectorXd w(static_cast<Eigen::Index>(ps.size()));
  for (std::size_t q = 0; q < ps.size(); ++q) w(q) = r(ps[q].first) * r(ps[q].second);
  return w;
}

double ResidualMomentSystem::estimating_function(CorrelationStructure structure,
                                                 double alpha) const {
  double u = 0.0;
  for (std::size_t i = 0; i < residuals.size(); ++i) {
    const Eigen::VectorXd w = products(i, structure);
    u += phi * (w.array() - phi * alpha).sum();
  }
  return u;
}

Eigen::Index ResidualMomentSystem::max_cluster_size() const {
  Eigen::Index n = 0;
  for (const auto& r : residuals) n = std::max(n, r.size());
  return n;
}

AlphaUpdate update_alpha(const ResidualMomentSystem& system, CorrelationStructure structure) {
  if (structure == CorrelationStructure::independence)
    throw DesignError("independence has no correlation parameter to estimate");
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < system.residuals.size(); ++i) {
    const Eigen::VectorXd w = system.products(i, structure);
    sum += w.sum();
    count += static_cast<std::size_t>(w.size());
  }
  if (count == 0)
    throw Error("correlation estimation needs at least one subject with two observations");
  if (!(system.phi > 0.0)) throw DomainError("correlation estimation needs a positive dispersion");

  AlphaUpdate out;
  out.raw_alpha = sum / static_cast<double>(count) / system.phi;
  auto [lo, hi] = WorkingCorrelation::admissible_range(structure, system.max_cluster_size());
  double alpha = out.raw_alpha;
  if (!(alpha > lo + kClipMargin)) {
    alpha = lo + kClipMargin;
    out.clipped = true;
  } else if (!(alpha < hi - kClipMargin)) {
    alpha = hi - kClipMargin;
    out.clipped = true;
  }
  out.correlation = WorkingCorrelation(structure, alpha);
  return out;
}

}  // namespace sgee
