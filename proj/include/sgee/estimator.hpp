#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "sgee/correlation.hpp"
#include "sgee/design.hpp"
#include "sgee/model_spec.hpp"
#include "sgee/splines.hpp"

namespace sgee {

/// A spline term of the linear predictor. Coefficients are stored in
/// reduced coordinates theta; the B-spline coefficients are
/// alpha = constraint * theta. For the time smooth the constraint spans the
/// sum-to-zero subspace over the observed times; for a carry-over smooth it
/// selects the basis functions that touch at least one carried observation.
struct SmoothBlock {
  enum class Kind { time, carryover };

  Kind kind = Kind::time;
  std::string label;
  std::size_t carry_index = 0;
  Eigen::MatrixXd constraint;
  /// Per-subject n_i x q evaluation matrix of the block.
  std::vector<Eigen::MatrixXd> design;

  Eigen::Index dimension() const { return constraint.cols(); }
  bool active() const { return dimension() > 0; }
};

/// Parameter values and per-subject caches of eta, mu, d mu / d eta and
/// V(mu). The caches are refreshed by SemiparametricGee::refresh.
struct FitState {
  Eigen::VectorXd beta;
  std::vector<Eigen::VectorXd> smooth;
  WorkingCorrelation correlation;
  double phi = 1.0;
  int iteration = 0;

  std::vector<Eigen::VectorXd> eta;
  std::vector<Eigen::VectorXd> mu;
  std::vector<Eigen::VectorXd> dmu;
  std::vector<Eigen::VectorXd> variance;
};

/// Estimating functions U3 (beta) and U1/U2 (one per smooth block) at a state.
struct BlockScores {
  Eigen::VectorXd beta;
  std::vector<Eigen::VectorXd> smooth;

  double max_abs() const;
};

struct IterationRecord {
  int cycle = 0;
  double max_change = 0.0;
  double beta_score = 0.0;
  double smooth_score = 0.0;
  double alpha = 0.0;
  double phi = 0.0;
  bool alpha_clipped = false;
};

struct CovariancePair {
  Eigen::MatrixXd naive;
  Eigen::MatrixXd robust;
};

/// Pointwise curve of a fitted smooth with sandwich-based bands.
struct SmoothCurve {
  std::string label;
  std::vector<double> time;
  std::vector<double> value;
  std::vector<double> std_error;
  std::vector<double> lower;
  std::vector<double> upper;
};

struct WaldRow {
  std::string label;
  double estimate = 0.0;
  double std_error = 0.0;
  double wald = 0.0;
  double p_value = 1.0;
};

class SemiparametricGee;

struct FitResult {
  bool converged = false;
  int iterations = 0;
  FitState state;
  std::vector<std::string> labels;
  /// Covariances of beta: phi * A^{-1} and A^{-1} B A^{-1}.
  Eigen::MatrixXd naive_covariance;
  Eigen::MatrixXd robust_covariance;
  /// Covariances of (beta, theta_1, ..., theta_B) in that order.
  CovariancePair joint;
  BlockScores scores;
  std::vector<IterationRecord> trace;
  std::vector<std::string> warnings;
  /// Set when A could not be inverted; estimates are still reported.
  std::optional<std::string> inference_error;
  std::shared_ptr<const SemiparametricGee> model;

  Eigen::VectorXd standard_errors() const;
  /// B-spline coefficients alpha of a smooth block.
  Eigen::VectorXd smooth_coefficients(std::size_t block) const;
  SmoothFunction<double> smooth_function(std::size_t block) const;
  /// Curve on `points` equally spaced times spanning the basis domain.
  SmoothCurve smooth_curve(std::size_t block, int points = 101, double level = 0.95) const;
};

struct FitOptions {
  /// Start from this state instead of initialize().
  std::optional<FitState> start;
  /// Smooth blocks held at their starting coefficients.
  std::vector<std::size_t> frozen_blocks;
  /// After the block sweeps of each cycle, solve U1..U3 jointly at the
  /// current (phi, alpha). Same fixed point; removes the slow linear
  /// convergence of pure backfitting when blocks are strongly coupled.
  bool joint_step = true;
};

/// Cyclic semi-parametric GEE solver. Each cycle solves, in order, the time
/// smooth equation, each carry-over smooth equation, the beta equation (all
/// by Fisher scoring with the other blocks as offsets), re-estimates phi and
/// then the working correlation parameter.
class SemiparametricGee : public std::enable_shared_from_this<SemiparametricGee> {
 public:
  static std::shared_ptr<SemiparametricGee> create(DesignBundle bundle, ModelSpec spec);

  const DesignBundle& design() const { return bundle_; }
  const ModelSpec& spec() const { return spec_; }
  const std::optional<SplineBasis<double>>& basis() const { return basis_; }
  const std::vector<SmoothBlock>& blocks() const { return blocks_; }
  /// Labels of the joint parameter vector (beta then smooth coordinates).
  std::vector<std::string> joint_labels() const;
  Eigen::Index joint_dimension() const;

  /// beta from an independence GLM fit without smooths; smooths, correlation
  /// parameter zero; phi = 1.
  FitState initialize() const;

  /// Recomputes the per-subject caches. Returns false when a mean leaves
  /// the family support (caches are then undefined).
  bool try_refresh(FitState& state) const;
  /// As try_refresh, throwing DomainError on a support violation.
  void refresh(FitState& state) const;

  /// Solves the block's estimating equation by Fisher scoring with every
  /// other term fixed. Updates and returns the block's reduced coefficients.
  Eigen::VectorXd solve_spline_block(FitState& state, std::size_t block) const;
  /// Fisher scoring for beta in the working-response (weighted least
  /// squares) form, smooth terms held fixed as offsets.
  Eigen::VectorXd solve_beta(FitState& state) const;
  /// Fisher scoring on (beta, theta of the non-frozen blocks) together.
  void solve_joint(FitState& state, const std::vector<std::size_t>& frozen_blocks = {}) const;
  /// Pearson moment estimate of phi from the current caches.
  double update_dispersion(FitState& state) const;
  /// Moment update of the working correlation; `damping` in (0, 1] blends
  /// the new value with the current one.
  AlphaUpdate update_correlation(FitState& state, double damping = 1.0) const;

  Eigen::VectorXd pearson_residuals(const FitState& state) const;
  BlockScores scores(const FitState& state) const;
  /// Naive (phi A^{-1}) and robust (A^{-1} B A^{-1}) covariances of the
  /// joint parameter vector. Throws SingularityError when A is singular.
  CovariancePair sandwich_covariance(const FitState& state) const;

  FitResult fit(const FitOptions& options = {}) const;

 private:
  SemiparametricGee(DesignBundle bundle, ModelSpec spec);

  struct Normal {
    Eigen::MatrixXd info;
    Eigen::VectorXd score;
  };

  template <typename DesignOf>
  Normal accumulate(const FitState& state, Eigen::Index q, DesignOf design_of) const;

  struct ScoringStep {
    Eigen::VectorXd step;
    Eigen::VectorXd score;
    double score_norm = 0.0;
    double merit = 0.0;
  };

  template <typename Assemble, typename Apply>
  Eigen::VectorXd scoring_loop(FitState& state, Eigen::VectorXd theta, Assemble assemble,
                               Apply apply, const std::string& what) const;

  template <typename Assemble, typename Apply>
  Eigen::VectorXd newton_direction(FitState& state, const Eigen::VectorXd& at,
                                   const Eigen::VectorXd& score, Assemble assemble, Apply apply) const;

  template <typename DesignOf, typename Apply>
  Eigen::VectorXd fisher_scoring(FitState& state, Eigen::VectorXd theta, DesignOf design_of,
                                 Apply apply, const std::string& what) const;

  DesignBundle bundle_;
  ModelSpec spec_;
  std::optional<SplineBasis<double>> basis_;
  std::vector<SmoothBlock> blocks_;
};

/// Builds the design-level model and runs the cyclic fit.
FitResult fit(const DesignBundle& bundle, const ModelSpec& spec, const FitOptions& options = {});

/// Wald chi-square tests of each beta from the robust covariance.
std::vector<WaldRow> wald_table(const FitResult& result);
WaldRow wald_row(std::string label, double estimate, double std_error);

}  // namespace sgee
