#include "sgee/family.hpp"

#include <cmath>
#include <sstream>

#include "sgee/errors.hpp"

namespace sgee {

Family Family::canonical(FamilyKind kind) {
  switch (kind) {
    case FamilyKind::gaussian: return {kind, LinkKind::identity};
    case FamilyKind::poisson: return {kind, LinkKind::log};
    case FamilyKind::gamma: return {kind, LinkKind::inverse};
    case FamilyKind::binomial: return {kind, LinkKind::logit};
  }
  return {};
}

double Family::link_fn(double mu) const {
  switch (link) {
    case LinkKind::identity: return mu;
    case LinkKind::log: return std::log(mu);
    case LinkKind::inverse: return 1.0 / mu;
    case LinkKind::logit: return std::log(mu / (1.0 - mu));
  }
  return mu;
}

double Family::inverse_link(double eta) const {
  switch (link) {
    case LinkKind::identity: return eta;
    case LinkKind::log: return std::exp(eta);
    case LinkKind::inverse: return 1.0 / eta;
    case LinkKind::logit: return 1.0 / (1.0 + std::exp(-eta));
  }
  return eta;
}

double Family::mu_eta(double eta) const {
  switch (link) {
    case LinkKind::identity: return 1.0;
    case LinkKind::log: return std::exp(eta);
    case LinkKind::inverse: return -1.0 / (eta * eta);
    case LinkKind::logit: {
      const double e = std::exp(-std::abs(eta));
      return e / ((1.0 + e) * (1.0 + e));
    }
  }
  return 1.0;
}

double Family::variance(double mu) const {
  switch (kind) {
    case FamilyKind::gaussian: return 1.0;
    case FamilyKind::poisson: return mu;
    case FamilyKind::gamma: return mu * mu;
    case FamilyKind::binomial: return mu * (1.0 - mu);
  }
  return 1.0;
}

bool Family::valid_mean(double mu) const {
  if (!std::isfinite(mu)) return false;
  switch (kind) {
    case FamilyKind::gaussian: return true;
    case FamilyKind::poisson:
    case FamilyKind::gamma: return mu > 0.0;
    case FamilyKind::binomial: return mu > 0.0 && mu < 1.0;
  }
  return false;
}

std::string Family::name() const { return to_string(kind) + "/" + to_string(link); }

FamilyValues family_functions(const Family& family, double eta) {
  const double mu = family.inverse_link(eta);
  if (!family.valid_mean(mu)) {
    std::ostringstream os;
    os << family.name() << ": mean " << mu << " at eta " << eta << " is outside the family support";
    throw DomainError(os.str());
  }
  return {mu, family.mu_eta(eta), family.variance(mu)};
}

FamilyKind parse_family_kind(std::string_view name) {
  if (name == "gaussian" || name == "normal") return FamilyKind::gaussian;
  if (name == "poisson") return FamilyKind::poisson;
  if (name == "gamma") return FamilyKind::gamma;
  if (name == "binomial") return FamilyKind::binomial;
  throw DesignError("unknown family '" + std::string(name) + "'");
}

LinkKind parse_link(std::string_view name) {
  if (name == "identity") return LinkKind::identity;
  if (name == "log") return LinkKind::log;
  if (name == "inverse") return LinkKind::inverse;
  if (name == "logit") return LinkKind::logit;
  throw DesignError("unknown link '" + std::string(name) + "'");
}

std::string to_string(FamilyKind kind) {
  switch (kind) {
    case FamilyKind::gaussian: return "gaussian";
    case FamilyKind::poisson: return "poisson";
    case FamilyKind::gamma: return "gamma";
    case FamilyKind::binomial: return "binomial";
  }
  return "?";
}

std::string to_string(LinkKind link) {
  switch (link) {
    case LinkKind::identity: return "identity";
    case LinkKind::log: return "log";
    case LinkKind::inverse: return "inverse";
    case LinkKind::logit: return "logit";
  }
  return "?";
}

}  // namespace sgee
