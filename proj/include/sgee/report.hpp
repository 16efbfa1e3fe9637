#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "sgee/diagnostics.hpp"
#include "sgee/estimator.hpp"
#include "sgee/simulation.hpp"

namespace sgee {

using Json = nlohmann::ordered_json;

/// A delimited table. Numeric cells are written with full precision so
/// that reparsing reproduces them exactly.
struct Table {
  using Cell = std::variant<std::string, double>;

  std::string name;
  std::vector<std::string> columns;
  std::vector<std::vector<Cell>> rows;

  void add_row(std::vector<Cell> row);
  std::size_t column(const std::string& name) const;
  double number(std::size_t row, const std::string& column) const;
};

void write_table(const Table& table, std::ostream& out);
void save_table(const Table& table, const std::filesystem::path& path);
/// Reads a table back; every cell comes back as text.
Table read_table(std::istream& in);
Table load_table(const std::filesystem::path& path);
/// Compares a table against its reparsed form: text cells must match and
/// numeric cells must agree to `tolerance` (relative for |x| > 1).
bool same_values(const Table& in_memory, const Table& reparsed, double tolerance = 1e-10);

/// Estimate, Std.err, Wald, Pr(>|W|) with display copies at two decimals.
Table coefficient_table(const FitResult& fit);
Table smooth_curve_table(const SmoothCurve& curve);
Table residual_table(const std::vector<ResidualRecord>& residuals);
Table qq_table(const QqBand& band);

struct QicComparison {
  std::string label;
  Family family;
  bool converged = false;
  std::optional<QicResult> qic;
  std::optional<std::string> error;
};
/// Rows ranked by QIC, failed fits last.
Table qic_table(std::vector<QicComparison> rows);

/// Coverage per n (rows) and hypothesis x model (columns). The treatment
/// layout has one hypothesis per treatment effect; the period layout uses
/// beta2 and beta3 at the first treatment effect.
Table coverage_table(const StudySummary& summary, bool period_layout);
/// Long-form RMSE series by model, n, treatment effect and component.
Table rmse_table(const StudySummary& summary);

Json to_json(const Table& table);
Json fit_json(const FitResult& fit);
Json study_json(const StudySummary& summary);

}  // namespace sgee
