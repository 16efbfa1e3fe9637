#pragma once

#include <algorithm>
#include <cmath>
#include <sstream>
#include <vector>

#include <Eigen/Dense>

#include "sgee/errors.hpp"

namespace sgee {

/// Clamped B-spline basis s_1..s_m of a given degree on [knots_0, knots_last].
template <typename Scalar>
class SplineBasis {
 public:
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

  SplineBasis() = default;

  SplineBasis(int degree, Vector knots) : degree_(degree), knots_(std::move(knots)) {
    if (degree_ < 0) throw DesignError("spline degree must be non-negative");
    const Eigen::Index n = knots_.size();
    if (n < 2 * (degree_ + 1)) throw DesignError("too few knots for a clamped basis of this degree");
    for (Eigen::Index i = 1; i < n; ++i)
      if (knots_(i) < knots_(i - 1)) throw DesignError("knot vector must be nondecreasing");
    for (int k = 1; k <= degree_; ++k)
      if (knots_(k) != knots_(0) || knots_(n - 1 - k) != knots_(n - 1))
        throw DesignError("boundary knots must be repeated degree + 1 times");
    if (!(knots_(0) < knots_(n - 1))) throw DesignError("spline domain is empty");
  }

  int degree() const { return degree_; }
  Eigen::Index size() const { return knots_.size() - degree_ - 1; }
  const Vector& knots() const { return knots_; }
  Scalar lower() const { return knots_(0); }
  Scalar upper() const { return knots_(knots_.size() - 1); }
  bool contains(Scalar t) const { return !(t < lower()) && !(t > upper()); }

  /// Index of the first nonzero basis function at t; the d+1 nonzero values
  /// occupy [first, first + d].
  Eigen::Index first_nonzero(Scalar t) const {
    require_domain(t);
    const Eigen::Index m = size();
    if (t == upper()) {
      Eigen::Index span = m - 1;
      while (span > degree_ && knots_(span) == knots_(span + 1)) --span;
      return span - degree_;
    }
    // Largest span index with knots(span) <= t < knots(span + 1).
    auto begin = knots_.data() + degree_;
    auto end = knots_.data() + m + 1;
    Eigen::Index span = (std::upper_bound(begin, end, t) - knots_.data()) - 1;
    return span - degree_;
  }

  /// (s_1(t), ..., s_m(t)) by the Cox-de Boor triangular recursion.
  Vector evaluate(Scalar t) const {
    Vector out = Vector::Zero(size());
    const Eigen::Index first = first_nonzero(t);
    const Eigen::Index span = first + degree_;
    std::vector<Scalar> N(degree_ + 1), left(degree_ + 1), right(degree_ + 1);
    N[0] = Scalar(1);
    for (int j = 1; j <= degree_; ++j) {
      left[j] = t - knots_(span + 1 - j);
      right[j] = knots_(span + j) - t;
      Scalar saved(0);
      for (int r = 0; r < j; ++r) {
        const Scalar denom = right[r + 1] + left[j - r];
        const Scalar temp = denom == Scalar(0) ? Scalar(0) : N[r] / denom;
        N[r] = saved + right[r + 1] * temp;
        saved = left[j - r] * temp;
      }
      N[j] = saved;
    }
    for (int j = 0; j <= degree_; ++j) out(first + j) = N[j];
    return out;
  }

  /// Row r holds evaluate(ts(r)).
  Matrix evaluate(const Eigen::Ref<const Vector>& ts) const {
    Matrix out(ts.size(), size());
    for (Eigen::Index r = 0; r < ts.size(); ++r) out.row(r) = evaluate(ts(r)).transpose();
    return out;
  }

  /// Greville abscissae: knot averages that reproduce linear functions.
  Vector greville() const {
    Vector g(size());
    for (Eigen::Index b = 0; b < size(); ++b) {
      if (degree_ == 0) {
        g(b) = (knots_(b) + knots_(b + 1)) / Scalar(2);
      } else {
        g(b) = knots_.segment(b + 1, degree_).sum() / Scalar(degree_);
      }
    }
    return g;
  }

 private:
  void require_domain(Scalar t) const {
    if (!contains(t)) {
      std::ostringstream os;
      os << "spline evaluation at t = " << t << " outside the domain [" << lower() << ", "
         << upper() << "]";
      throw ExtrapolationError(os.str());
    }
  }

  int degree_ = 0;
  Vector knots_;
};

/// f(t) = sum_b coefficients_b s_b(t).
template <typename Scalar>
class SmoothFunction {
 public:
  using Vector = typename SplineBasis<Scalar>::Vector;

  SmoothFunction(SplineBasis<Scalar> basis, Vector coefficients)
      : basis_(std::move(basis)), coefficients_(std::move(coefficients)) {
    if (coefficients_.size() != basis_.size())
      throw DesignError("smooth coefficient count does not match the basis size");
  }

  const SplineBasis<Scalar>& basis() const { return basis_; }
  const Vector& coefficients() const { return coefficients_; }

  Scalar operator()(Scalar t) const { return basis_.evaluate(t).dot(coefficients_); }

 private:
  SplineBasis<Scalar> basis_;
  Vector coefficients_;
};

/// Type-7 sample quantile (linear interpolation between order statistics)
/// of an already sorted sample.
template <typename Scalar>
Scalar sorted_quantile(const std::vector<Scalar>& sorted, double prob) {
  const double h = (static_cast<double>(sorted.size()) - 1.0) * prob;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + Scalar(h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

/// Clamped basis with m - degree - 1 interior knots at sample quantiles of
/// the supplied times and boundary knots at their range.
template <typename Scalar>
SplineBasis<Scalar> build_basis(std::vector<Scalar> times, int degree, int m) {
  if (degree < 0) throw DesignError("spline degree must be non-negative");
  if (m < degree + 1)
    throw DesignError("basis size " + std::to_string(m) + " must be at least degree + 1");
  std::sort(times.begin(), times.end());
  if (times.empty() || !(times.front() < times.back()))
    throw DesignError("at least two distinct times are needed to build a spline basis");
  const int interior = m - degree - 1;
  using Vector = typename SplineBasis<Scalar>::Vector;
  Vector knots(m + degree + 1);
  for (int k = 0; k <= degree; ++k) {
    knots(k) = times.front();
    knots(m + k) = times.back();
  }
  for (int k = 1; k <= interior; ++k) {
    const Scalar q = sorted_quantile(times, static_cast<double>(k) / (interior + 1));
    const Scalar previous = knots(degree + k - 1);
    if (!(q > previous) || !(q < times.back())) {
      auto distinct = std::unique(times.begin(), times.end()) - times.begin();
      throw DesignError("cannot place " + std::to_string(interior) +
                        " distinct interior knots at quantiles of " + std::to_string(distinct) +
                        " distinct times; use a smaller basis size");
    }
    knots(degree + k) = q;
  }
  return SplineBasis<Scalar>(degree, std::move(knots));
}

template <typename Scalar>
typename SplineBasis<Scalar>::Vector evaluate_basis(const SplineBasis<Scalar>& basis, Scalar t) {
  return basis.evaluate(t);
}

template <typename Scalar>
Scalar evaluate_smooth(const SmoothFunction<Scalar>& f, Scalar t) {
  return f(t);
}

}  // namespace sgee
