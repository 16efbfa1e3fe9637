#include "sgee/dataset.hpp"

#include <algorithm>
#include <set>
#include <sstream>

#include "sgee/errors.hpp"

namespace sgee {

namespace {

void push_unique(std::vector<std::string>& out, const std::string& value) {
  if (std::find(out.begin(), out.end(), value) == out.end()) out.push_back(value);
}

}  // namespace

std::string SubjectRecord::sequence_label() const {
  bool multi = std::any_of(sequence.begin(), sequence.end(),
                           [](const std::string& t) { return t.size() != 1; });
  std::string out;
  for (std::size_t i = 0; i < sequence.size(); ++i) {
    if (multi && i > 0) out += '-';
    out += sequence[i];
  }
  return out;
}

std::vector<std::string> split_sequence(const std::string& label) {
  std::vector<std::string> out;
  if (label.find('-') != std::string::npos) {
    std::stringstream ss(label);
    std::string tok;
    while (std::getline(ss, tok, '-'))
      if (!tok.empty()) out.push_back(tok);
  } else {
    for (char c : label) out.emplace_back(1, c);
  }
  return out;
}

LongitudinalDataset::LongitudinalDataset(std::vector<SubjectRecord> subjects)
    : subjects_(std::move(subjects)) {
  std::set<std::string> ids;
  std::set<std::string> covariates;
  for (auto& s : subjects_) {
    if (!ids.insert(s.id).second) throw DesignError("duplicate subject id '" + s.id + "'");
    if (s.sequence.empty()) throw DesignError("subject '" + s.id + "' has an empty sequence");
    if (s.observations.empty()) throw DesignError("subject '" + s.id + "' has no observations");
    const int P = static_cast<int>(s.sequence.size());
    if (periods_ == 0) periods_ = P;
    if (P != periods_)
      throw DesignError("subject '" + s.id + "' has a sequence of length " + std::to_string(P) +
                        ", expected " + std::to_string(periods_));
    for (const auto& t : s.sequence) push_unique(treatments_, t);
    push_unique(sequences_, s.sequence_label());

    std::stable_sort(s.observations.begin(), s.observations.end(),
                     [](const Observation& a, const Observation& b) {
                       return a.period != b.period ? a.period < b.period : a.time < b.time;
                     });
    std::vector<std::size_t> counts(P, 0);
    for (std::size_t k = 0; k < s.observations.size(); ++k) {
      auto& o = s.observations[k];
      if (o.period < 1 || o.period > P)
        throw DesignError("subject '" + s.id + "': period " + std::to_string(o.period) +
                          " outside sequence length " + std::to_string(P));
      if (k > 0 && s.observations[k - 1].period == o.period && !(s.observations[k - 1].time < o.time))
        throw DesignError("subject '" + s.id + "': duplicate or non-increasing time " +
                          std::to_string(o.time) + " in period " + std::to_string(o.period));
      if (o.treatment != s.sequence[o.period - 1])
        throw DesignError("subject '" + s.id + "': treatment '" + o.treatment + "' in period " +
                          std::to_string(o.period) + " does not match sequence " +
                          s.sequence_label());
      o.within = static_cast<int>(++counts[o.period - 1]);
      for (const auto& [name, value] : o.covariates) covariates.insert(name);
    }
    for (int j = 0; j < P; ++j) {
      if (counts[j] == 0)
        throw DesignError("subject '" + s.id + "' has no observations in period " +
                          std::to_string(j + 1));
      max_period_ = std::max(max_period_, counts[j]);
    }
    observations_ += s.observations.size();
    max_cluster_ = std::max(max_cluster_, s.observations.size());
  }
  std::sort(treatments_.begin(), treatments_.end());
  std::sort(sequences_.begin(), sequences_.end());
  covariates_.assign(covariates.begin(), covariates.end());
  for (const auto& s : subjects_)
    for (const auto& o : s.observations)
      for (const auto& name : covariates_)
        if (!o.covariates.count(name))
          throw DesignError("subject '" + s.id + "' is missing covariate '" + name + "'");
}

std::vector<double> LongitudinalDataset::all_times() const {
  std::vector<double> out;
  out.reserve(observations_);
  for (const auto& s : subjects_)
    for (const auto& o : s.observations) out.push_back(o.time);
  return out;
}

bool operator==(const Observation& a, const Observation& b) {
  return a.period == b.period && a.within == b.within && a.time == b.time &&
         a.treatment == b.treatment && a.response == b.response && a.covariates == b.covariates;
}

bool operator==(const SubjectRecord& a, const SubjectRecord& b) {
  return a.id == b.id && a.sequence == b.sequence && a.observations == b.observations;
}

bool operator==(const LongitudinalDataset& a, const LongitudinalDataset& b) {
  return a.subjects_ == b.subjects_;
}

}  // namespace sgee
