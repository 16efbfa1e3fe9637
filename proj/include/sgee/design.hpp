#pragma once

#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "sgee/dataset.hpp"
#include "sgee/model_spec.hpp"

namespace sgee {

/// Per-subject design. Rows follow the subject's observations ordered by
/// (period, time).
struct SubjectDesign {
  std::string id;
  Eigen::MatrixXd X;
  /// Within-period measurement time: the covariate of the time smooth and of
  /// every carry-over smooth.
  Eigen::VectorXd time;
  /// One 0/1 indicator per carried treatment: the previous period's
  /// treatment was that treatment. Always zero in period 1.
  std::vector<Eigen::VectorXd> carry;
  Eigen::VectorXd y;
  /// Fixed additive term of the linear predictor (zero unless set by caller).
  Eigen::VectorXd offset;
  /// (period, within-period index) of each row, both 1-based.
  std::vector<std::pair<int, int>> index;

  Eigen::Index rows() const { return y.size(); }
};

struct DesignBundle {
  std::vector<std::string> column_labels;
  std::vector<std::string> carried_treatments;
  std::vector<SubjectDesign> subjects;

  Eigen::Index columns() const { return static_cast<Eigen::Index>(column_labels.size()); }
  Eigen::Index observation_count() const;
  Eigen::Index max_cluster_size() const;
  /// max over (subject, period) of the number of observations.
  int max_period_size() const;
  std::vector<double> all_times() const;

  /// All subjects' X stacked row-wise.
  Eigen::MatrixXd stacked_X() const;
  Eigen::VectorXd stacked_y() const;
};

/// Builds X_i with reference-level dummy coding (first level dropped) in the
/// order of spec.terms, plus time and carry-over covariates.
DesignBundle build_design(const LongitudinalDataset& data, const ModelSpec& spec);

/// Pearson moment estimate sum(r^2) / (N - p).
double estimate_dispersion(const Eigen::Ref<const Eigen::VectorXd>& pearson_residuals, int p);

}  // namespace sgee
