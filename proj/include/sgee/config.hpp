#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "sgee/model_spec.hpp"
#include "sgee/report.hpp"
#include "sgee/simulation.hpp"

namespace sgee {

enum class Command { fit, residuals, qic_compare, simulate };
Command parse_command(const std::string& name);
std::string to_string(Command command);

struct RunConfig {
  Command command = Command::fit;
  std::filesystem::path input;
  std::filesystem::path output = "sgee-out";
  std::uint64_t seed = 20240101;
  bool write_tables = true;
  bool write_json = true;

  ModelSpec model;
  /// Candidate families for qic-compare; the model spec supplies the rest.
  std::vector<Family> compare;

  int qq_simulations = 1000;
  double level = 0.95;
  int curve_points = 101;

  StudyGrid study;
  std::vector<ModelVariant> study_models{ModelVariant::gee_s, ModelVariant::gee_1,
                                         ModelVariant::gee_2};

  /// Throws DesignError for an inconsistent configuration or a missing input.
  void validate() const;
};

/// Reads the keys of a JSON config object into `config`; unknown keys are
/// rejected.
void apply_json(RunConfig& config, const Json& json);
RunConfig load_config(const std::filesystem::path& path);
Json to_json(const RunConfig& config);

/// Executes the configured command and writes its artifacts. Returns 0, or
/// 2 when a fit did not converge (artifacts are written either way).
/// Hard failures throw.
int run(const RunConfig& config, std::ostream& log);

}  // namespace sgee
