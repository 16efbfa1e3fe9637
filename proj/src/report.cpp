#include "sgee/report.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "sgee/errors.hpp"
#include "sgee/io.hpp"

namespace sgee {

namespace {

Json number_json(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

}  // namespace

void Table::add_row(std::vector<Cell> row) {
  if (row.size() != columns.size())
    throw Error("table '" + name + "': row has " + std::to_string(row.size()) + " cells, expected " +
                std::to_string(columns.size()));
  rows.push_back(std::move(row));
}

std::size_t Table::column(const std::string& col) const {
  auto it = std::find(columns.begin(), columns.end(), col);
  if (it == columns.end()) throw Error("table '" + name + "' has no column '" + col + "'");
  return static_cast<std::size_t>(it - columns.begin());
}

double Table::number(std::size_t row, const std::string& col) const {
  const Cell& c = rows.at(row).at(column(col));
  if (const double* d = std::get_if<double>(&c)) return *d;
  return parse_number(std::get<std::string>(c), "table '" + name + "' column " + col);
}

void write_table(const Table& table, std::ostream& out) {
  for (std::size_t j = 0; j < table.columns.size(); ++j)
    out << (j ? "," : "") << csv_field(table.columns[j]);
  out << '\n';
  for (const auto& row : table.rows) {
    for (std::size_t j = 0; j < row.size(); ++j) {
      if (j) out << ',';
      if (const double* d = std::get_if<double>(&row[j]))
        out << format_number(*d);
      else
        out << csv_field(std::get<std::string>(row[j]));
    }
    out << '\n';
  }
}

void save_table(const Table& table, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  write_table(table, out);
}

Table read_table(std::istream& in) {
  Table t;
  std::string line;
  if (!std::getline(in, line)) throw ParseError("empty table");
  t.columns = split_csv_record(line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto fields = split_csv_record(line);
    std::vector<Table::Cell> row(fields.begin(), fields.end());
    t.add_row(std::move(row));
  }
  return t;
}

Table load_table(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open '" + path.string() + "'");
  Table t = read_table(in);
  t.name = path.stem().string();
  return t;
}

bool same_values(const Table& a, const Table& b, double tolerance) {
  if (a.columns != b.columns || a.rows.size() != b.rows.size()) return false;
  for (std::size_t i = 0; i < a.rows.size(); ++i) {
    for (std::size_t j = 0; j < a.columns.size(); ++j) {
      const auto& x = a.rows[i][j];
      const auto& y = b.rows[i][j];
      const std::string ys = std::holds_alternative<std::string>(y) ? std::get<std::string>(y)
                                                                    : format_number(std::get<double>(y));
      if (const double* d = std::get_if<double>(&x)) {
        double v = 0.0;
        try {
          v = parse_number(ys, "cell");
        } catch (const ParseError&) {
          return false;
        }
        if (std::isnan(*d) != std::isnan(v)) return false;
        if (std::isnan(v)) continue;
        if (std::isinf(*d) || std::isinf(v)) {
          if (*d != v) return false;
          continue;
        }
        if (std::abs(*d - v) > tolerance * std::max(1.0, std::abs(*d))) return false;
      } else if (std::get<std::string>(x) != ys) {
        return false;
      }
    }
  }
  return true;
}

Table coefficient_table(const FitResult& fit) {
  Table t;
  t.name = "coefficients";
  t.columns = {"term",         "estimate",    "std_error",    "wald",
               "p_value",      "naive_std_error", "estimate_2dp", "std_error_2dp",
               "wald_2dp",     "p_value_2dp"};
  const auto rows = wald_table(fit);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    const double naive = std::sqrt(fit.naive_covariance(i, i));
    t.add_row({r.label, r.estimate, r.std_error, r.wald, r.p_value, naive, format_display(r.estimate),
               format_display(r.std_error), format_display(r.wald), format_display(r.p_value)});
  }
  return t;
}

Table smooth_curve_table(const SmoothCurve& c) {
  Table t;
  t.name = "smooth";
  t.columns = {"smooth", "time", "value", "std_error", "lower", "upper"};
  for (std::size_t i = 0; i < c.time.size(); ++i)
    t.add_row({c.label, c.time[i], c.value[i], c.std_error[i], c.lower[i], c.upper[i]});
  return t;
}

Table residual_table(const std::vector<ResidualRecord>& residuals) {
  Table t;
  t.name = "residuals";
  t.columns = {"subject", "period", "within", "working", "leverage", "standardized"};
  for (const auto& r : residuals)
    t.add_row({r.subject, static_cast<double>(r.period), static_cast<double>(r.within), r.working,
               r.leverage, r.standardized ? Table::Cell(*r.standardized) : Table::Cell("NA")});
  return t;
}

Table qq_table(const QqBand& band) {
  Table t;
  t.name = "qq";
  t.columns = {"theoretical", "sample", "lower", "upper"};
  for (std::size_t i = 0; i < band.sample.size(); ++i)
    t.add_row({band.theoretical[i], band.sample[i], band.lower[i], band.upper[i]});
  return t;
}

Table qic_table(std::vector<QicComparison> rows) {
  std::stable_sort(rows.begin(), rows.end(), [](const QicComparison& a, const QicComparison& b) {
    if (a.qic.has_value() != b.qic.has_value()) return a.qic.has_value();
    return a.qic && a.qic->qic < b.qic->qic;
  });
  Table t;
  t.name = "qic";
  t.columns = {"rank", "model", "family", "link", "converged", "qic", "quasi_likelihood",
               "trace_penalty", "qic_2dp", "note"};
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    const double nan = std::nan("");
    t.add_row({static_cast<double>(i + 1), r.label, to_string(r.family.kind), to_string(r.family.link),
               r.converged ? "true" : "false", r.qic ? r.qic->qic : nan,
               r.qic ? r.qic->quasi_likelihood : nan, r.qic ? r.qic->trace_penalty : nan,
               r.qic ? format_display(r.qic->qic) : std::string("NA"), r.error.value_or("")});
  }
  return t;
}

namespace {

template <typename T>
std::vector<T> distinct(std::vector<T> v) {
  std::vector<T> out;
  for (const auto& x : v)
    if (std::find(out.begin(), out.end(), x) == out.end()) out.push_back(x);
  return out;
}

}  // namespace

Table coverage_table(const StudySummary& s, bool period_layout) {
  std::vector<int> ns;
  std::vector<double> effects;
  std::vector<ModelVariant> models;
  for (const auto& c : s.cells) {
    ns.push_back(c.subjects_per_sequence);
    effects.push_back(c.treatment_effect);
    models.push_back(c.model);
  }
  ns = distinct(ns);
  effects = distinct(effects);
  models = distinct(models);

  struct Hyp {
    std::string name;
    double effect;
    int component;
  };
  std::vector<Hyp> hyps;
  if (period_layout) {
    if (!effects.empty()) {
      hyps.push_back({"beta2", effects.front(), 2});
      hyps.push_back({"beta3", effects.front(), 3});
    }
  } else {
    for (double e : effects) hyps.push_back({"beta1=" + format_number(e), e, 1});
  }

  Table t;
  t.name = period_layout ? "coverage_period" : "coverage_treatment";
  t.columns = {"n"};
  for (const auto& h : hyps)
    for (auto m : models) t.columns.push_back(h.name + " " + to_string(m));
  for (const auto& h : hyps)
    for (auto m : models) t.columns.push_back(h.name + " " + to_string(m) + " 2dp");
  t.columns.push_back("failures");
  for (int n : ns) {
    std::vector<Table::Cell> row{static_cast<double>(n)};
    std::vector<Table::Cell> display;
    int failures = 0;
    for (const auto& h : hyps)
      for (auto m : models) {
        const auto& c = s.at(m, n, h.effect, h.component);
        row.push_back(c.coverage);
        display.push_back(format_display(c.coverage));
        failures += c.failures;
      }
    row.insert(row.end(), display.begin(), display.end());
    row.push_back(static_cast<double>(failures));
    t.add_row(std::move(row));
  }
  return t;
}

Table rmse_table(const StudySummary& s) {
  Table t;
  t.name = "rmse";
  t.columns = {"model", "n", "beta1", "component", "rmse", "rmse_se", "coverage", "used", "failures"};
  for (const auto& c : s.cells)
    t.add_row({to_string(c.model), static_cast<double>(c.subjects_per_sequence), c.treatment_effect,
               c.label, c.rmse, c.rmse_se, c.coverage, static_cast<double>(c.used),
               static_cast<double>(c.failures)});
  return t;
}

Json to_json(const Table& table) {
  Json rows = Json::array();
  for (const auto& row : table.rows) {
    Json r = Json::object();
    for (std::size_t j = 0; j < row.size(); ++j) {
      if (const double* d = std::get_if<double>(&row[j]))
        r[table.columns[j]] = number_json(*d);
      else
        r[table.columns[j]] = std::get<std::string>(row[j]);
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

Json fit_json(const FitResult& fit) {
  const ModelSpec& spec = fit.model->spec();
  Json j;
  j["converged"] = fit.converged;
  j["iterations"] = fit.iterations;
  j["family"] = to_string(spec.family.kind);
  j["link"] = to_string(spec.family.link);
  j["correlation"] = to_string(spec.correlation);
  j["alpha"] = fit.state.correlation.alpha();
  j["phi"] = number_json(fit.state.phi);
  j["observations"] = fit.model->design().observation_count();
  j["subjects"] = fit.model->design().subjects.size();
  j["max_score"] = number_json(fit.scores.max_abs());
  if (fit.inference_error) j["inference_error"] = *fit.inference_error;
  j["coefficients"] = to_json(coefficient_table(fit));
  Json smooth = Json::array();
  for (const auto& b : fit.model->blocks())
    smooth.push_back({{"label", b.label}, {"dimension", b.dimension()}});
  j["smooth_terms"] = smooth;
  j["smooth_bands"] = "pointwise, from the sandwich covariance of the spline coefficients";
  j["warnings"] = fit.warnings;
  return j;
}

Json study_json(const StudySummary& s) {
  Json j;
  j["coverage_treatment"] = to_json(coverage_table(s, false));
  j["coverage_period"] = to_json(coverage_table(s, true));
  j["rmse"] = to_json(rmse_table(s));
  j["failures"] = s.failures;
  j["max_score"] = s.max_score;
  return j;
}

}  // namespace sgee
