#pragma once

#include <cmath>
#include <functional>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "sgee/dataset.hpp"
#include "sgee/design.hpp"
#include "sgee/estimator.hpp"
#include "sgee/model_spec.hpp"

namespace testing {

/// Crossover layout and mean structure for test data generators.
struct Layout {
  std::vector<std::string> sequences{"AB", "BA"};
  int subjects_per_sequence = 10;
  std::vector<double> times{0.0, 1.0, 2.0, 3.0, 4.0};
  double intercept = 1.0;
  /// Effect per treatment level; the first level is the reference.
  std::vector<double> treatment{0.0, 0.5};
  /// Effect per period, period 1 first (zero).
  std::vector<double> period{0.0, 0.3, -0.2, 0.1};
  std::function<double(double)> time_effect = [](double) { return 0.0; };
  /// Added in periods after treatment A.
  std::function<double(double)> carry_effect = [](double) { return 0.0; };
};

inline double mean_eta(const Layout& L, const std::vector<std::string>& seq, std::size_t j, double t) {
  const std::string& trt = seq[j];
  double eta = L.intercept + L.period[j] + L.time_effect(t);
  if (trt == "B") eta += L.treatment[1];
  if (j > 0 && seq[j - 1] == "A") eta += L.carry_effect(t);
  return eta;
}

/// `draw(eta_vector, rng)` turns one subject's linear predictors into responses.
template <typename Draw>
sgee::LongitudinalDataset generate(const Layout& L, std::uint64_t seed, Draw draw) {
  std::mt19937_64 rng(seed);
  std::vector<sgee::SubjectRecord> subjects;
  for (int s = 0; s < L.subjects_per_sequence; ++s) {
    for (const auto& label : L.sequences) {
      sgee::SubjectRecord rec;
      rec.id = label + "_" + std::to_string(s);
      rec.sequence = sgee::split_sequence(label);
      std::vector<double> eta;
      for (std::size_t j = 0; j < rec.sequence.size(); ++j) {
        for (double t : L.times) {
          sgee::Observation o;
          o.period = static_cast<int>(j + 1);
          o.time = t;
          o.treatment = rec.sequence[j];
          rec.observations.push_back(o);
          eta.push_back(mean_eta(L, rec.sequence, j, t));
        }
      }
      const std::vector<double> y = draw(eta, rng);
      for (std::size_t k = 0; k < y.size(); ++k) rec.observations[k].response = y[k];
      subjects.push_back(std::move(rec));
    }
  }
  return sgee::LongitudinalDataset(std::move(subjects));
}

/// Gaussian responses with AR(1) errors of standard deviation sigma.
inline sgee::LongitudinalDataset gaussian_data(const Layout& L, std::uint64_t seed, double sigma,
                                               double rho = 0.0) {
  return generate(L, seed, [&](const std::vector<double>& eta, std::mt19937_64& rng) {
    std::normal_distribution<double> n01;
    std::vector<double> y(eta.size());
    double e = 0.0;
    for (std::size_t k = 0; k < eta.size(); ++k) {
      e = k == 0 ? n01(rng) : rho * e + std::sqrt(1.0 - rho * rho) * n01(rng);
      y[k] = eta[k] + sigma * e;
    }
    return y;
  });
}

/// Independent gamma responses with log-linear mean and the given shape.
inline sgee::LongitudinalDataset gamma_data(const Layout& L, std::uint64_t seed, double shape) {
  return generate(L, seed, [&](const std::vector<double>& eta, std::mt19937_64& rng) {
    std::vector<double> y(eta.size());
    for (std::size_t k = 0; k < eta.size(); ++k) {
      std::gamma_distribution<double> g(shape, std::exp(eta[k]) / shape);
      y[k] = g(rng);
    }
    return y;
  });
}

inline sgee::LongitudinalDataset poisson_data(const Layout& L, std::uint64_t seed) {
  return generate(L, seed, [&](const std::vector<double>& eta, std::mt19937_64& rng) {
    std::vector<double> y(eta.size());
    for (std::size_t k = 0; k < eta.size(); ++k) {
      std::poisson_distribution<int> p(std::exp(eta[k]));
      y[k] = p(rng);
    }
    return y;
  });
}

inline sgee::ModelSpec parametric_spec(sgee::Family family, sgee::CorrelationStructure corr) {
  sgee::ModelSpec spec;
  spec.family = family;
  spec.correlation = corr;
  spec.spline.time_smooth = false;
  spec.carryover.smooth = false;
  return spec;
}

inline sgee::Family gaussian() { return sgee::Family{sgee::FamilyKind::gaussian, sgee::LinkKind::identity}; }
inline sgee::Family poisson() { return sgee::Family{sgee::FamilyKind::poisson, sgee::LinkKind::log}; }
inline sgee::Family gamma_log() { return sgee::Family{sgee::FamilyKind::gamma, sgee::LinkKind::log}; }

/// Textbook recursive Cox-de Boor definition, independent of the library's
/// triangular evaluation. The last basis function is closed at the right end.
inline double cox_de_boor(const std::vector<double>& k, int i, int d, double t) {
  if (d == 0) {
    const bool last = t == k.back() && k[i] < k[i + 1] && k[i + 1] == k.back();
    return (k[i] <= t && t < k[i + 1]) || last ? 1.0 : 0.0;
  }
  double out = 0.0;
  const double left = k[i + d] - k[i];
  const double right = k[i + d + 1] - k[i + 1];
  if (left > 0.0) out += (t - k[i]) / left * cox_de_boor(k, i, d - 1, t);
  if (right > 0.0) out += (k[i + d + 1] - t) / right * cox_de_boor(k, i + 1, d - 1, t);
  return out;
}

/// Max |U| over beta and all smooth blocks.
inline double max_score(const sgee::FitResult& r) { return r.scores.max_abs(); }

}  // namespace testing
