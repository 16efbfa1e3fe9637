#include <doctest.h>

#include <cmath>
#include <map>
#include <numbers>

#include "sgee/errors.hpp"
#include "sgee/simulation.hpp"

using namespace sgee;

namespace {

std::map<std::string, const SubjectRecord*> by_id(const LongitudinalDataset& d) {
  std::map<std::string, const SubjectRecord*> out;
  for (const auto& s : d.subjects()) out[s.id] = &s;
  return out;
}

bool same_responses(const SubjectRecord& a, const SubjectRecord& b) {
  if (a.observations.size() != b.observations.size()) return false;
  for (std::size_t k = 0; k < a.observations.size(); ++k)
    if (a.observations[k].response != b.observations[k].response ||
        a.observations[k].time != b.observations[k].time)
      return false;
  return true;
}

/// Smallest k with P(Y <= k) >= u, summing the pmf term by term in log space.
int brute_quantile(double u, double mu) {
  double cdf = 0.0;
  for (int k = 0;; ++k) {
    cdf += std::exp(k * std::log(mu) - mu - std::lgamma(k + 1.0));
    if (cdf >= u) return k;
    if (k > 100000) return k;
  }
}

/// Monte Carlo check of cell means, cells = (sequence, period), against the
/// time-averaged exp(eta) of the generator.
void check_cell_means(const Scenario& sc, int replicates) {
  const auto grid = simulation_time_grid(sc.observations_per_period);
  const double b0 = *sc.intercept, c1 = *sc.time_amplitude, c2 = *sc.carry_amplitude;
  for (std::size_t q = 0; q < sc.sequences.size(); ++q) {
    const std::string& seq = sc.sequences[q];
    for (std::size_t j = 0; j < seq.size(); ++j) {
      double expected = 0.0;
      for (double t : grid) {
        double eta = b0 + (seq[j] == 'B' ? sc.treatment_effect : 0.0) +
                     (j == 1 ? sc.period2_effect : 0.0) + (j == 2 ? sc.period3_effect : 0.0) +
                     c1 * std::cos(t) + (j > 0 && seq[j - 1] == 'A' ? c2 * std::sin(t) : 0.0);
        expected += std::exp(eta) / grid.size();
      }
      // subject-level period means are independent across subjects and replicates
      std::vector<double> means;
      for (int r = 0; r < replicates; ++r) {
        const auto data = simulate_dataset(sc, r);
        for (const auto& s : data.subjects()) {
          if (s.sequence_label() != seq) continue;
          double m = 0.0;
          for (const auto& o : s.observations)
            if (o.period == static_cast<int>(j + 1)) m += o.response / grid.size();
          means.push_back(m);
        }
      }
      double mean = 0.0, var = 0.0;
      for (double m : means) mean += m / means.size();
      for (double m : means) var += (m - mean) * (m - mean) / (means.size() - 1);
      const double se = std::sqrt(var / means.size());
      INFO(seq << " period " << j + 1 << ": " << mean << " vs " << expected << " (se " << se << ")");
      CHECK(std::abs(mean - expected) <= 3.0 * se);
    }
  }
}

}  // namespace

TEST_CASE("time grid") {
  const auto g = simulation_time_grid(15);
  REQUIRE(g.size() == 15);
  CHECK(g.front() == 0.0);
  CHECK(g.back() == doctest::Approx(2.0 * std::numbers::pi));
  CHECK(g[7] == doctest::Approx(std::numbers::pi));
}

TEST_CASE("datasets are deterministic in seed and replicate") {
  Scenario sc;
  sc.subjects_per_sequence = 4;
  const auto a = simulate_dataset(sc, 3);
  const auto b = simulate_dataset(sc, 3);
  const auto c = simulate_dataset(sc, 4);
  REQUIRE(a.size() == 8);
  CHECK(a.periods() == 3);
  CHECK(a.observation_count() == 8 * 3 * 15);
  bool all_same = true, any_diff = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    all_same = all_same && same_responses(a.subjects()[i], b.subjects()[i]);
    any_diff = any_diff || !same_responses(a.subjects()[i], c.subjects()[i]);
  }
  CHECK(all_same);
  CHECK(any_diff);
  sc.seed = 2;
  CHECK_FALSE(same_responses(a.subjects()[0], simulate_dataset(sc, 3).subjects()[0]));
}

TEST_CASE("smaller designs are prefixes of larger ones") {
  Scenario small, large;
  small.subjects_per_sequence = 3;
  large.subjects_per_sequence = 9;
  const auto a = simulate_dataset(small, 0);
  const auto b = simulate_dataset(large, 0);
  const auto index = by_id(b);
  for (const auto& s : a.subjects()) {
    REQUIRE(index.count(s.id));
    CHECK(same_responses(s, *index.at(s.id)));
  }
  CHECK(replicate_truth(small, 5).c1 == replicate_truth(large, 5).c1);
}

TEST_CASE("replicate truth and the intercept target") {
  Scenario sc;
  sc.treatment_effect = 2.0;
  const ReplicateTruth t = replicate_truth(sc, 7);
  const auto beta = true_beta(sc, 7);
  REQUIRE(beta.size() == 4);
  double mean_cos = 0.0;
  const auto g = simulation_time_grid(15);
  for (double x : g) mean_cos += std::cos(x) / g.size();
  CHECK(beta[0] == doctest::Approx(t.beta0 + t.c1 * mean_cos).epsilon(1e-14));
  CHECK(beta[1] == 2.0);
  CHECK(beta[2] == 3.0);
  CHECK(beta[3] == 3.0);
  sc.intercept = 0.25;
  sc.time_amplitude = 0.0;
  CHECK(true_beta(sc, 7)[0] == 0.25);
  CHECK(replicate_truth(sc, 7).c2 == t.c2);
}

TEST_CASE("continuous time only shifts the recorded times") {
  Scenario sc;
  sc.subjects_per_sequence = 2;
  const auto a = simulate_dataset(sc, 1);
  sc.continuous_time = true;
  const auto b = simulate_dataset(sc, 1);
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t k = 0; k < a.subjects()[i].observations.size(); ++k) {
      const auto& oa = a.subjects()[i].observations[k];
      const auto& ob = b.subjects()[i].observations[k];
      CHECK(oa.response == ob.response);
      CHECK(ob.time == doctest::Approx(oa.time + 2.0 * std::numbers::pi * (oa.period - 1)));
    }
}

TEST_CASE("Poisson quantile agrees with the cumulative sum of the pmf") {
  for (double mu : {0.05, 1.0, 4.5, 29.9, 30.0, 55.0, 400.0, 3000.0})
    for (double u : {1e-12, 0.001, 0.1, 0.37, 0.5, 0.8, 0.99, 0.999999})
      CHECK_MESSAGE(poisson_quantile(u, mu) == brute_quantile(u, mu), "mu = " << mu << ", u = " << u);
  CHECK(poisson_quantile(0.0, 3.0) == 0);
}

TEST_CASE("cell means match the generator without random sinusoids") {
  Scenario sc;
  sc.subjects_per_sequence = 40;
  sc.period2_effect = 1.0;
  sc.period3_effect = -0.5;
  sc.intercept = 0.5;
  sc.time_amplitude = 0.0;
  sc.carry_amplitude = 0.0;
  check_cell_means(sc, 25);
}

TEST_CASE("carry-over enters after treatment A only") {
  Scenario sc;
  sc.subjects_per_sequence = 40;
  sc.period2_effect = 0.5;
  sc.period3_effect = 0.2;
  sc.intercept = 0.8;
  sc.time_amplitude = 0.3;
  sc.carry_amplitude = 0.9;
  check_cell_means(sc, 25);
}

TEST_CASE("study models") {
  CHECK(to_string(ModelVariant::gee_2) == "GEE-2");
  CHECK(parse_model_variant("GEE-1") == ModelVariant::gee_1);
  CHECK(parse_model_variant("gee-s") == ModelVariant::gee_s);
  CHECK_THROWS_AS(parse_model_variant("GEE-3"), Error);
  const auto s = study_model(ModelVariant::gee_s);
  CHECK(s.spline.time_smooth);
  CHECK(s.carryover.smooth);
  const auto q = study_model(ModelVariant::gee_2);
  CHECK_FALSE(q.spline.time_smooth);
  CHECK_FALSE(q.carryover.smooth);
  CHECK(q.family.kind == FamilyKind::poisson);
  CHECK(q.correlation == CorrelationStructure::ar1);
}

TEST_CASE("a one-replicate study has 0/1 coverage") {
  StudyGrid grid;
  grid.subjects_per_sequence = {5};
  grid.replicates = 1;
  const auto summary = run_study(grid, {ModelVariant::gee_s, ModelVariant::gee_1});
  CHECK(summary.cells.size() == 8);
  for (const auto& c : summary.cells) {
    CHECK(c.used + c.failures == 1);
    if (c.used == 1) CHECK((c.coverage == 0.0 || c.coverage == 1.0));
  }
  CHECK(summary.at(ModelVariant::gee_1, 5, 0.5, 1).label == "treatment B");
  CHECK_THROWS_AS(summary.at(ModelVariant::gee_2, 5, 0.5, 1), Error);
}
