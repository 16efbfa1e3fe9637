#pragma once

#include <map>
#include <string>
#include <vector>

namespace sgee {

struct Observation {
  int period = 1;  // 1-based
  int within = 1;  // 1-based position inside the period, assigned on construction
  double time = 0.0;
  std::string treatment;
  double response = 0.0;
  std::map<std::string, double> covariates;
};

struct SubjectRecord {
  std::string id;
  std::vector<std::string> sequence;
  std::vector<Observation> observations;

  std::string sequence_label() const;
};

/// Long-format crossover data. Construction sorts each subject's
/// observations by (period, time), numbers them within period and checks:
///   - observed periods form 1..P (P = sequence length) without gaps,
///   - times strictly increase within a period,
///   - each observation's treatment is the one the sequence prescribes.
class LongitudinalDataset {
 public:
  LongitudinalDataset() = default;
  explicit LongitudinalDataset(std::vector<SubjectRecord> subjects);

  const std::vector<SubjectRecord>& subjects() const { return subjects_; }
  std::size_t size() const { return subjects_.size(); }

  /// Treatment levels, sorted.
  const std::vector<std::string>& treatments() const { return treatments_; }
  /// Sequence labels, sorted.
  const std::vector<std::string>& sequences() const { return sequences_; }
  const std::vector<std::string>& covariate_names() const { return covariates_; }

  int periods() const { return periods_; }
  std::size_t observation_count() const { return observations_; }
  /// Largest number of observations on one subject.
  std::size_t max_cluster_size() const { return max_cluster_; }
  /// max over (subject, period) of n_ij.
  std::size_t max_period_size() const { return max_period_; }

  std::vector<double> all_times() const;

  friend bool operator==(const LongitudinalDataset&, const LongitudinalDataset&);

 private:
  std::vector<SubjectRecord> subjects_;
  std::vector<std::string> treatments_;
  std::vector<std::string> sequences_;
  std::vector<std::string> covariates_;
  int periods_ = 0;
  std::size_t observations_ = 0;
  std::size_t max_cluster_ = 0;
  std::size_t max_period_ = 0;
};

bool operator==(const Observation& a, const Observation& b);
bool operator==(const SubjectRecord& a, const SubjectRecord& b);

/// Splits a sequence label into treatment tokens: "T1-T2-T1" on '-',
/// otherwise one token per character ("ABA").
std::vector<std::string> split_sequence(const std::string& label);

}  // namespace sgee
