#pragma once

namespace sgee::stats {

double normal_cdf(double x);
/// Inverse standard normal CDF (Acklam's rational approximation refined by
/// one Halley step), accurate to ~1e-15 on (0, 1).
double normal_quantile(double p);
/// P(X > x) for X ~ chi-square with one degree of freedom.
double chi2_1_sf(double x);

}  // namespace sgee::stats
