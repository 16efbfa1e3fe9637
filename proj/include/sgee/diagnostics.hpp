#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "sgee/estimator.hpp"

namespace sgee {

struct QicResult {
  double qic = 0.0;
  /// Independence log-likelihood QL(mu; I) at the fitted means and phi,
  /// normalising terms included so that families can be compared.
  double quasi_likelihood = 0.0;
  /// The mu-dependent part of quasi_likelihood alone.
  double kernel = 0.0;
  /// trace(Omega_I^{-1} V_R), without the factor 2.
  double trace_penalty = 0.0;
};

/// Independence quasi-likelihood of the fitted means with its normalising
/// terms: gaussian -sum (y - mu)^2 / (2 phi) - N/2 log(2 pi phi); poisson
/// sum (y log mu - mu - log y!); gamma with nu = 1 / phi
/// sum (-(y / mu + log mu) nu + nu log nu + (nu - 1) log y - lgamma(nu)).
/// Throws Error for binomial.
double quasi_likelihood(const FitResult& fit);

/// QIC = -2 QL(mu; I) + 2 trace(Omega_I^{-1} V_R), where Omega_I^{-1} is the
/// model-based information under working independence at the fitted
/// parameters and V_R the robust covariance of the fit. Both act on the
/// joint parameter vector (beta and smooth coordinates).
QicResult qic(const FitResult& fit);

struct ResidualRecord {
  std::string subject;
  int period = 0;
  int within = 0;
  /// e' W^{1/2} (z - X beta) before the leverage correction.
  double working = 0.0;
  double leverage = 0.0;
  /// Empty when the leverage is 1.
  std::optional<double> standardized;
};

/// Pearson standardized residuals with leverages from the symmetric
/// projection W^{1/2} X (sum X'WX)^{-1} X' W^{1/2}, W = N V^{-1} N and
/// V = phi A^{1/2} R A^{1/2}.
std::vector<ResidualRecord> standardized_residuals(const SemiparametricGee& model,
                                                   const FitState& state);
std::vector<ResidualRecord> standardized_residuals(const FitResult& fit);

/// Defined standardized residuals only, in observation order.
std::vector<double> defined_values(const std::vector<ResidualRecord>& residuals);

struct QqBand {
  std::vector<double> theoretical;
  std::vector<double> sample;
  std::vector<double> lower;
  std::vector<double> upper;
};

/// Standard-normal order-statistic medians (Filliben) for n points.
std::vector<double> normal_order_medians(std::size_t n);

/// Sorted residuals against normal order-statistic medians, with a pointwise
/// envelope from n_sim sorted standard-normal samples. Draw d uses a
/// generator seeded by (seed, d).
QqBand qq_band_data(std::vector<double> residuals, int n_sim = 1000, double level = 0.95,
                    std::uint64_t seed = 20240101);

struct DiagnosticsReport {
  std::optional<QicResult> qic;
  std::vector<ResidualRecord> residuals;
  QqBand qq;
};

DiagnosticsReport diagnose(const FitResult& fit, int n_sim = 1000, double level = 0.95,
                           std::uint64_t seed = 20240101);

}  // namespace sgee
