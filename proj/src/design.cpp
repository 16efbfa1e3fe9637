#include "sgee/design.hpp"

#include <algorithm>
#include <cmath>

#include "sgee/errors.hpp"

namespace sgee {

namespace {

std::string power_label(const std::string& base, int k) {
  return k == 1 ? base : base + "^" + std::to_string(k);
}

}  // namespace

Eigen::Index DesignBundle::observation_count() const {
  Eigen::Index n = 0;
  for (const auto& s : subjects) n += s.rows();
  return n;
}

Eigen::Index DesignBundle::max_cluster_size() const {
  Eigen::Index n = 0;
  for (const auto& s : subjects) n = std::max(n, s.rows());
  return n;
}

int DesignBundle::max_period_size() const {
  int best = 0;
  for (const auto& s : subjects) {
    int run = 0;
    for (std::size_t r = 0; r < s.index.size(); ++r) {
      run = (r > 0 && s.index[r].first == s.index[r - 1].first) ? run + 1 : 1;
      best = std::max(best, run);
    }
  }
  return best;
}

std::vector<double> DesignBundle::all_times() const {
  std::vector<double> out;
  out.reserve(observation_count());
  for (const auto& s : subjects) out.insert(out.end(), s.time.begin(), s.time.end());
  return out;
}

Eigen::MatrixXd DesignBundle::stacked_X() const {
  Eigen::MatrixXd X(observation_count(), columns());
  Eigen::Index row = 0;
  for (const auto& s : subjects) {
    X.middleRows(row, s.rows()) = s.X;
    row += s.rows();
  }
  return X;
}

Eigen::VectorXd DesignBundle::stacked_y() const {
  Eigen::VectorXd y(observation_count());
  Eigen::Index row = 0;
  for (const auto& s : subjects) {
    y.segment(row, s.rows()) = s.y;
    row += s.rows();
  }
  return y;
}

DesignBundle build_design(const LongitudinalDataset& data, const ModelSpec& spec) {
  spec.validate();
  if (data.size() == 0) throw DesignError("dataset has no subjects");
  const auto& treatments = data.treatments();
  const auto& sequences = data.sequences();
  const int P = data.periods();

  DesignBundle bundle;
  if (spec.uses_carryover()) {
    std::string reference = spec.carryover.reference.empty() ? treatments.front()
                                                             : spec.carryover.reference;
    if (std::find(treatments.begin(), treatments.end(), reference) == treatments.end())
      throw DesignError("carry-over reference treatment '" + reference +
                        "' does not occur in the design");
    for (const auto& t : treatments)
      if (t != reference) bundle.carried_treatments.push_back(t);
  }

  for (const auto& term : spec.terms) {
    switch (term.kind) {
      case Term::Kind::intercept: bundle.column_labels.push_back("(Intercept)"); break;
      case Term::Kind::period:
        for (int j = 2; j <= P; ++j) bundle.column_labels.push_back("period " + std::to_string(j));
        break;
      case Term::Kind::treatment:
        for (std::size_t l = 1; l < treatments.size(); ++l)
          bundle.column_labels.push_back("treatment " + treatments[l]);
        break;
      case Term::Kind::sequence:
        for (std::size_t l = 1; l < sequences.size(); ++l)
          bundle.column_labels.push_back("sequence " + sequences[l]);
        break;
      case Term::Kind::covariate: {
        const auto& names = data.covariate_names();
        if (std::find(names.begin(), names.end(), term.name) == names.end())
          throw DesignError("unknown covariate '" + term.name + "'");
        bundle.column_labels.push_back(term.name);
        break;
      }
      case Term::Kind::time_poly:
        for (int k = 1; k <= term.degree; ++k) bundle.column_labels.push_back(power_label("time", k));
        break;
      case Term::Kind::carry_poly:
        for (const auto& c : bundle.carried_treatments) {
          bundle.column_labels.push_back("carry " + c);
          for (int k = 1; k <= term.degree; ++k)
            bundle.column_labels.push_back("carry " + c + ":" + power_label("time", k));
        }
        break;
    }
  }

  const Eigen::Index p = bundle.columns();
  const std::size_t nc = bundle.carried_treatments.size();
  bundle.subjects.reserve(data.size());
  for (const auto& subject : data.subjects()) {
    const auto n = static_cast<Eigen::Index>(subject.observations.size());
    SubjectDesign sd;
    sd.id = subject.id;
    sd.X.setZero(n, p);
    sd.time.resize(n);
    sd.y.resize(n);
    sd.offset.setZero(n);
    sd.carry.assign(nc, Eigen::VectorXd::Zero(n));
    sd.index.reserve(n);
    const std::string label = subject.sequence_label();

    for (Eigen::Index r = 0; r < n; ++r) {
      const auto& o = subject.observations[r];
      sd.time(r) = o.time;
      sd.y(r) = o.response;
      sd.index.emplace_back(o.period, o.within);
      const std::string* previous = o.period > 1 ? &subject.sequence[o.period - 2] : nullptr;
      for (std::size_t c = 0; c < nc; ++c)
        if (previous && *previous == bundle.carried_treatments[c]) sd.carry[c](r) = 1.0;

      Eigen::Index col = 0;
      for (const auto& term : spec.terms) {
        switch (term.kind) {
          case Term::Kind::intercept: sd.X(r, col++) = 1.0; break;
          case Term::Kind::period:
            for (int j = 2; j <= P; ++j) sd.X(r, col++) = o.period == j ? 1.0 : 0.0;
            break;
          case Term::Kind::treatment:
            for (std::size_t l = 1; l < treatments.size(); ++l)
              sd.X(r, col++) = o.treatment == treatments[l] ? 1.0 : 0.0;
            break;
          case Term::Kind::sequence:
            for (std::size_t l = 1; l < sequences.size(); ++l)
              sd.X(r, col++) = label == sequences[l] ? 1.0 : 0.0;
            break;
          case Term::Kind::covariate: sd.X(r, col++) = o.covariates.at(term.name); break;
          case Term::Kind::time_poly:
            for (int k = 1; k <= term.degree; ++k) sd.X(r, col++) = std::pow(o.time, k);
            break;
          case Term::Kind::carry_poly:
            for (std::size_t c = 0; c < nc; ++c) {
              const double d = sd.carry[c](r);
              sd.X(r, col++) = d;
              for (int k = 1; k <= term.degree; ++k) sd.X(r, col++) = d * std::pow(o.time, k);
            }
            break;
        }
      }
    }
    bundle.subjects.push_back(std::move(sd));
  }
  return bundle;
}

double estimate_dispersion(const Eigen::Ref<const Eigen::VectorXd>& pearson_residuals, int p) {
  const auto N = pearson_residuals.size();
  if (N <= p)
    throw DesignError("dispersion needs more observations (" + std::to_string(N) +
                      ") than parameters (" + std::to_string(p) + ")");
  return pearson_residuals.squaredNorm() / static_cast<double>(N - p);
}

}  // namespace sgee
