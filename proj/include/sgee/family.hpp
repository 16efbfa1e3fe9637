#pragma once

#include <string>
#include <string_view>

namespace sgee {

enum class FamilyKind { gaussian, poisson, gamma, binomial };
enum class LinkKind { identity, log, inverse, logit };

struct FamilyValues {
  double mu;
  double dmu_deta;
  double variance;
};

/// Exponential family with its link. Variance functions are
/// gaussian 1, poisson mu, gamma mu^2, binomial mu(1-mu).
struct Family {
  FamilyKind kind = FamilyKind::gaussian;
  LinkKind link = LinkKind::identity;

  static Family canonical(FamilyKind kind);

  double link_fn(double mu) const;
  double inverse_link(double eta) const;
  double mu_eta(double eta) const;
  double variance(double mu) const;

  /// True when mu lies strictly inside the support of the mean.
  bool valid_mean(double mu) const;

  std::string name() const;
};

/// Mean, derivative of the inverse link and variance function at eta.
/// Throws DomainError when the mean leaves the family support.
FamilyValues family_functions(const Family& family, double eta);

FamilyKind parse_family_kind(std::string_view name);
LinkKind parse_link(std::string_view name);
std::string to_string(FamilyKind kind);
std::string to_string(LinkKind link);

}  // namespace sgee
