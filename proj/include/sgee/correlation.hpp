#pragma once

#include <cmath>
#include <optional>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "sgee/model_spec.hpp"

namespace sgee {

/// Working correlation R(alpha) over a subject's observations ordered by
/// (period, time).
class WorkingCorrelation {
 public:
  WorkingCorrelation() = default;
  WorkingCorrelation(CorrelationStructure structure, double alpha);

  static WorkingCorrelation independence() { return {}; }

  CorrelationStructure structure() const { return structure_; }
  double alpha() const { return alpha_; }

  /// Open interval of admissible alpha for clusters of at most max_size
  /// observations.
  static std::pair<double, double> admissible_range(CorrelationStructure structure,
                                                    Eigen::Index max_size);
  /// Throws DomainError when alpha is outside the admissible range for size.
  void check(Eigen::Index size) const;

  /// Dense R(alpha) of the given size.
  template <typename Scalar = double>
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> materialize(Eigen::Index size) const;

  /// R^{-1} B using closed forms (identity, exchangeable Sherman-Morrison,
  /// tridiagonal AR(1) inverse); O(size * cols).
  Eigen::MatrixXd solve(const Eigen::Ref<const Eigen::MatrixXd>& B) const;

 private:
  CorrelationStructure structure_ = CorrelationStructure::independence;
  double alpha_ = 0.0;
};

template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> WorkingCorrelation::materialize(
    Eigen::Index size) const {
  check(size);
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  Matrix R = Matrix::Identity(size, size);
  if (structure_ == CorrelationStructure::independence) return R;
  for (Eigen::Index a = 0; a < size; ++a)
    for (Eigen::Index b = 0; b < size; ++b) {
      if (a == b) continue;
      R(a, b) = structure_ == CorrelationStructure::exchangeable
                    ? Scalar(alpha_)
                    : Scalar(std::pow(alpha_, static_cast<double>(std::abs(a - b))));
    }
  return R;
}

/// Free-function form of WorkingCorrelation::materialize.
template <typename Scalar = double>
Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> materialize(const WorkingCorrelation& corr,
                                                                  Eigen::Index size) {
  return corr.template materialize<Scalar>(size);
}

/// Pearson residuals r_ijk = (y - mu) / sqrt(V(mu)) for every subject, plus
/// the current dispersion.
struct ResidualMomentSystem {
  std::vector<Eigen::VectorXd> residuals;
  double phi = 1.0;

  /// Pairs of positions (a, b), a < b, entering the moment equation for a
  /// subject with `size` observations: all C(size, 2) pairs for
  /// exchangeable, adjacent pairs for AR(1).
  static std::vector<std::pair<Eigen::Index, Eigen::Index>> pairs(CorrelationStructure structure,
                                                                  Eigen::Index size);
  /// Residual products W_ik over pairs(structure, size).
  Eigen::VectorXd products(std::size_t subject, CorrelationStructure structure) const;

  /// sum_i (d eps/d alpha)^T F^{-1} (W_i - eps_i) with F = I and
  /// eps = phi * alpha on the structure's pairs. Its root is the alpha
  /// update.
  double estimating_function(CorrelationStructure structure, double alpha) const;

  Eigen::Index max_cluster_size() const;
};

struct AlphaUpdate {
  WorkingCorrelation correlation;
  /// Unclipped moment estimate.
  double raw_alpha = 0.0;
  bool clipped = false;
};

/// Moment solution of the correlation estimating equation: mean pairwise
/// residual product over phi, clipped into the admissible interval.
AlphaUpdate update_alpha(const ResidualMomentSystem& system, CorrelationStructure structure);

}  // namespace sgee
