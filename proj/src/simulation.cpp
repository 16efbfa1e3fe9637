#include "sgee/simulation.hpp"

#include <cmath>
#include <numbers>
#include <random>

#include "sgee/design.hpp"
#include "sgee/errors.hpp"
#include "sgee/estimator.hpp"
#include "sgee/stats.hpp"

namespace sgee {

namespace {

constexpr std::uint32_t kTruthStream = 0x7472u;

std::mt19937_64 stream(std::uint64_t seed, std::initializer_list<std::uint32_t> tags) {
  std::vector<std::uint32_t> words{static_cast<std::uint32_t>(seed),
                                   static_cast<std::uint32_t>(seed >> 32)};
  words.insert(words.end(), tags.begin(), tags.end());
  std::seed_seq seq(words.begin(), words.end());
  return std::mt19937_64(seq);
}

}  // namespace

std::vector<double> simulation_time_grid(int points) {
  std::vector<double> t(points);
  for (int k = 0; k < points; ++k)
    t[k] = points == 1 ? 0.0 : 2.0 * std::numbers::pi * k / (points - 1);
  return t;
}

ReplicateTruth replicate_truth(const Scenario& scenario, int replicate_index) {
  auto rng = stream(scenario.seed, {kTruthStream, static_cast<std::uint32_t>(replicate_index)});
  std::normal_distribution<double> normal;
  ReplicateTruth truth;
  truth.beta0 = normal(rng);
  truth.c1 = normal(rng);
  truth.c2 = normal(rng);
  if (scenario.intercept) truth.beta0 = *scenario.intercept;
  if (scenario.time_amplitude) truth.c1 = *scenario.time_amplitude;
  if (scenario.carry_amplitude) truth.c2 = *scenario.carry_amplitude;
  return truth;
}

std::vector<double> true_beta(const Scenario& scenario, int replicate_index) {
  const ReplicateTruth truth = replicate_truth(scenario, replicate_index);
  double mean_cos = 0.0;
  for (double t : simulation_time_grid(scenario.observations_per_period)) mean_cos += std::cos(t);
  mean_cos /= scenario.observations_per_period;
  return {truth.beta0 + truth.c1 * mean_cos, scenario.treatment_effect, scenario.period2_effect,
          scenario.period3_effect};
}

int poisson_quantile(double u, double mu) {
  if (!(mu > 0.0)) throw DomainError("poisson mean must be positive");
  u = std::clamp(u, 1e-15, 1.0 - 1e-15);
  if (mu < 30.0) {
    int k = 0;
    double p = std::exp(-mu);
    double cdf = p;
    while (cdf < u && k < 100000) {
      ++k;
      p *= mu / k;
      cdf += p;
    }
    return k;
  }
  const double z = stats::normal_quantile(u);
  int k = std::max(0, static_cast<int>(std::floor(mu + std::sqrt(mu) * z + (z * z - 1.0) / 6.0 + 0.5)));
  double p = std::exp(k * std::log(mu) - mu - std::lgamma(k + 1.0));
  // cdf(k) by summing the lower tail until the terms vanish
  double cdf = p;
  double term = p;
  for (int j = k; j > 0 && term > 1e-18 * cdf; --j) {
    term *= j / mu;
    cdf += term;
  }
  if (cdf < u) {
    while (cdf < u) {
      ++k;
      p *= mu / k;
      cdf += p;
      if (p == 0.0) break;
    }
  } else {
    while (k > 0 && cdf - p >= u) {
      cdf -= p;
      p *= k / mu;
      --k;
    }
  }
  return k;
}

LongitudinalDataset simulate_dataset(const Scenario& scenario, int replicate_index) {
  const ReplicateTruth truth = replicate_truth(scenario, replicate_index);
  const auto grid = simulation_time_grid(scenario.observations_per_period);
  const double a = scenario.latent_alpha;
  const double innovation = std::sqrt(1.0 - a * a);

  std::vector<SubjectRecord> subjects;
  for (int s = 0; s < scenario.subjects_per_sequence; ++s) {
    for (std::size_t q = 0; q < scenario.sequences.size(); ++q) {
      SubjectRecord rec;
      rec.sequence = split_sequence(scenario.sequences[q]);
      rec.id = scenario.sequences[q] + "-" + std::to_string(s + 1);
      auto rng = stream(scenario.seed, {static_cast<std::uint32_t>(replicate_index),
                                        static_cast<std::uint32_t>(q + 1),
                                        static_cast<std::uint32_t>(s)});
      std::normal_distribution<double> normal;
      double latent = 0.0;
      bool first = true;
      for (std::size_t j = 0; j < rec.sequence.size(); ++j) {
        const std::string& trt = rec.sequence[j];
        const bool carried = j > 0 && rec.sequence[j - 1] == "A";
        for (std::size_t k = 0; k < grid.size(); ++k) {
          const double e = normal(rng);
          latent = first ? e : a * latent + innovation * e;
          first = false;
          const double t = grid[k];
          double eta = truth.beta0 + truth.c1 * std::cos(t) +
                       (carried ? truth.c2 * std::sin(t) : 0.0);
          if (trt == "B") eta += scenario.treatment_effect;
          if (j == 1) eta += scenario.period2_effect;
          if (j == 2) eta += scenario.period3_effect;
          Observation o;
          o.period = static_cast<int>(j + 1);
          o.time = scenario.continuous_time ? t + 2.0 * std::numbers::pi * j : t;
          o.treatment = trt;
          o.response = poisson_quantile(stats::normal_cdf(latent), std::exp(eta));
          rec.observations.push_back(std::move(o));
        }
      }
      subjects.push_back(std::move(rec));
    }
  }
  return LongitudinalDataset(std::move(subjects));
}

std::string to_string(ModelVariant variant) {
  switch (variant) {
    case ModelVariant::gee_s: return "GEE-S";
    case ModelVariant::gee_1: return "GEE-1";
    case ModelVariant::gee_2: return "GEE-2";
  }
  return "?";
}

ModelVariant parse_model_variant(const std::string& name) {
  if (name == "GEE-S" || name == "gee-s") return ModelVariant::gee_s;
  if (name == "GEE-1" || name == "gee-1") return ModelVariant::gee_1;
  if (name == "GEE-2" || name == "gee-2") return ModelVariant::gee_2;
  throw DesignError("unknown study model '" + name + "'");
}

ModelSpec study_model(ModelVariant variant) {
  ModelSpec spec;
  spec.family = Family{FamilyKind::poisson, LinkKind::log};
  spec.correlation = CorrelationStructure::ar1;
  spec.terms = {Term{Term::Kind::intercept}, Term{Term::Kind::treatment}, Term{Term::Kind::period}};
  spec.carryover.reference = "B";
  spec.spline.degree = 3;
  if (variant == ModelVariant::gee_s) {
    spec.spline.time_smooth = true;
    spec.carryover.smooth = true;
  } else {
    const int degree = variant == ModelVariant::gee_1 ? 1 : 2;
    spec.spline.time_smooth = false;
    spec.carryover.smooth = false;
    spec.terms.push_back(Term{Term::Kind::time_poly, "", degree});
    spec.terms.push_back(Term{Term::Kind::carry_poly, "", degree});
  }
  return spec;
}

const StudyCell& StudySummary::at(ModelVariant model, int n, double treatment_effect,
                                  int component) const {
  for (const auto& c : cells)
    if (c.model == model && c.subjects_per_sequence == n && c.treatment_effect == treatment_effect &&
        c.component == component)
      return c;
  throw Error("no study cell for " + to_string(model) + ", n = " + std::to_string(n));
}

StudySummary run_study(const StudyGrid& grid, const std::vector<ModelVariant>& models,
                       const StudyProgress& progress) {
  if (grid.replicates < 1) throw DesignError("a study needs at least one replicate");
  const double z = stats::normal_quantile(0.5 * (1.0 + grid.level));
  static const char* kLabels[] = {"(Intercept)", "treatment B", "period 2", "period 3"};
  StudySummary summary;

  for (int n : grid.subjects_per_sequence) {
    for (double effect : grid.treatment_effects) {
      Scenario scenario = grid.base;
      scenario.subjects_per_sequence = n;
      scenario.treatment_effect = effect;
      const std::size_t M = models.size();
      // per model, per component: squared errors and hits
      std::vector<std::array<std::vector<double>, 4>> sq(M);
      std::vector<std::array<int, 4>> hits(M, {0, 0, 0, 0});
      std::vector<int> failures(M, 0);

      for (int r = 0; r < grid.replicates; ++r) {
        const LongitudinalDataset data = simulate_dataset(scenario, r);
        const auto truth = true_beta(scenario, r);
        for (std::size_t m = 0; m < M; ++m) {
          if (progress) progress(models[m], n, effect, r);
          const ModelSpec spec = study_model(models[m]);
          try {
            const FitResult res = fit(build_design(data, spec), spec);
            if (!res.converged || res.inference_error)
              throw Error(res.inference_error ? *res.inference_error : "no convergence");
            summary.max_score = std::max(summary.max_score, res.scores.max_abs());
            const Eigen::VectorXd se = res.standard_errors();
            for (int c = 0; c < 4; ++c) {
              const double err = res.state.beta(c) - truth[c];
              sq[m][c].push_back(err * err);
              if (std::abs(err) <= z * se(c)) ++hits[m][c];
            }
          } catch (const Error& e) {
            ++failures[m];
            summary.failures.push_back(to_string(models[m]) + " n=" + std::to_string(n) +
                                       " b1=" + std::to_string(effect) + " replicate " +
                                       std::to_string(r) + ": " + e.what());
          }
        }
      }

      for (std::size_t m = 0; m < M; ++m) {
        for (int c = 0; c < 4; ++c) {
          StudyCell cell;
          cell.model = models[m];
          cell.subjects_per_sequence = n;
          cell.treatment_effect = effect;
          cell.component = c;
          cell.label = kLabels[c];
          cell.failures = failures[m];
          const auto& e = sq[m][c];
          cell.used = static_cast<int>(e.size());
          if (!e.empty()) {
            double mean = 0.0;
            for (double v : e) mean += v;
            mean /= e.size();
            double var = 0.0;
            for (double v : e) var += (v - mean) * (v - mean);
            var = e.size() > 1 ? var / (e.size() - 1) : 0.0;
            cell.rmse = std::sqrt(mean);
            cell.rmse_se = cell.rmse > 0.0 ? std::sqrt(var / e.size()) / (2.0 * cell.rmse) : 0.0;
            cell.coverage = static_cast<double>(hits[m][c]) / e.size();
          }
          summary.cells.push_back(cell);
        }
      }
    }
  }
  return summary;
}

}  // namespace sgee
