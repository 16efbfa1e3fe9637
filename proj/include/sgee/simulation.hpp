#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "sgee/dataset.hpp"
#include "sgee/model_spec.hpp"

namespace sgee {

/// Poisson crossover generator
///   log mu = b0 + b1 [treatment B] + b2 [period 2] + b3 [period 3]
///            + c1 cos(t) + c2 sin(t) delta,
/// delta = 1 when the previous period's treatment was A. b0, c1, c2 are
/// N(0, 1) per replicate; responses share an AR(1) Gaussian copula within
/// subject.
struct Scenario {
  std::vector<std::string> sequences{"ABA", "BAB"};
  int subjects_per_sequence = 50;
  int observations_per_period = 15;
  double treatment_effect = 0.5;
  double period2_effect = 3.0;
  double period3_effect = 3.0;
  /// Latent AR(1) correlation of the copula.
  double latent_alpha = 0.5;
  std::uint64_t seed = 1;
  /// Number the time axis continuously across periods (period j covers
  /// [2 pi (j - 1), 2 pi j]) instead of restarting it in every period. The
  /// sinusoids are unchanged; only the recorded time differs.
  bool continuous_time = false;
  /// Overrides of the per-replicate random draws (tests only).
  std::optional<double> intercept;
  std::optional<double> time_amplitude;
  std::optional<double> carry_amplitude;
};

struct ReplicateTruth {
  double beta0 = 0.0;
  double c1 = 0.0;
  double c2 = 0.0;
};

/// Within-period times: equally spaced on [0, 2 pi], endpoints included.
std::vector<double> simulation_time_grid(int points);

ReplicateTruth replicate_truth(const Scenario& scenario, int replicate_index);
/// True (beta0, beta1, beta2, beta3) of a replicate. The intercept target
/// is b0 plus the grid mean of c1 cos(t): a time smooth centred over the
/// observed times identifies the intercept at that level.
std::vector<double> true_beta(const Scenario& scenario, int replicate_index);
/// Quantile function of the Poisson(mu) distribution.
int poisson_quantile(double u, double mu);

/// Deterministic in (scenario, replicate_index). Subject s of sequence q
/// draws from its own stream, so smaller designs are prefixes of larger ones.
LongitudinalDataset simulate_dataset(const Scenario& scenario, int replicate_index);

enum class ModelVariant { gee_s, gee_1, gee_2 };
std::string to_string(ModelVariant variant);
ModelVariant parse_model_variant(const std::string& name);

/// GEE-S: B-spline time and carry-over smooths. GEE-1 / GEE-2: the smooths
/// replaced by linear / quadratic polynomials in time (and time within
/// carried periods). All Poisson/log with AR(1) working correlation.
ModelSpec study_model(ModelVariant variant);

struct StudyGrid {
  Scenario base;
  std::vector<int> subjects_per_sequence{50};
  std::vector<double> treatment_effects{0.5};
  int replicates = 200;
  double level = 0.95;
};

struct StudyCell {
  ModelVariant model = ModelVariant::gee_s;
  int subjects_per_sequence = 0;
  double treatment_effect = 0.0;
  /// 0..3 for beta0..beta3.
  int component = 0;
  std::string label;
  double rmse = 0.0;
  /// Delta-method Monte Carlo standard error of rmse.
  double rmse_se = 0.0;
  double coverage = 0.0;
  int used = 0;
  int failures = 0;
};

struct StudySummary {
  std::vector<StudyCell> cells;
  std::vector<std::string> failures;
  /// Largest |U| over all estimating equations of the converged fits.
  double max_score = 0.0;

  const StudyCell& at(ModelVariant model, int n, double treatment_effect, int component) const;
};

using StudyProgress = std::function<void(ModelVariant, int n, double treatment_effect, int replicate)>;

/// Fits every model to every replicate of every (n, treatment effect) cell
/// and aggregates RMSE and Wald-interval coverage per beta component.
/// Replicates whose fit throws or does not converge are excluded and
/// counted as failures.
StudySummary run_study(const StudyGrid& grid, const std::vector<ModelVariant>& models,
                       const StudyProgress& progress = {});

}  // namespace sgee
