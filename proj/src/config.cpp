#include "sgee/config.hpp"

#include <fstream>
#include <ostream>
#include <set>

#include "sgee/design.hpp"
#include "sgee/errors.hpp"
#include "sgee/io.hpp"

namespace sgee {

namespace fs = std::filesystem;

Command parse_command(const std::string& name) {
  if (name == "fit") return Command::fit;
  if (name == "residuals") return Command::residuals;
  if (name == "qic-compare") return Command::qic_compare;
  if (name == "simulate") return Command::simulate;
  throw ParseError("unknown command '" + name + "'");
}

std::string to_string(Command command) {
  switch (command) {
    case Command::fit: return "fit";
    case Command::residuals: return "residuals";
    case Command::qic_compare: return "qic-compare";
    case Command::simulate: return "simulate";
  }
  return "?";
}

void RunConfig::validate() const {
  model.validate();
  if (command != Command::simulate) {
    if (input.empty()) throw DesignError(to_string(command) + " needs an input file");
    if (!fs::exists(input)) throw DesignError("input '" + input.string() + "' does not exist");
  }
  if (command == Command::qic_compare && compare.empty())
    throw DesignError("qic-compare needs at least one candidate family");
  if (!(level > 0.0 && level < 1.0)) throw DesignError("level must lie in (0, 1)");
  if (qq_simulations < 2) throw DesignError("at least 2 envelope simulations are required");
  if (curve_points < 2) throw DesignError("curve_points must be at least 2");
  if (command == Command::simulate) {
    if (study.replicates < 1) throw DesignError("replicates must be at least 1");
    if (study.subjects_per_sequence.empty() || study.treatment_effects.empty() || study_models.empty())
      throw DesignError("simulate needs subjects_per_sequence, treatment_effects and models");
    for (int n : study.subjects_per_sequence)
      if (n < 1) throw DesignError("subjects_per_sequence must be positive");
  }
  if (!write_tables && !write_json) throw DesignError("no report format selected");
}

namespace {

Family family_from(const Json& j) {
  Family f = Family::canonical(parse_family_kind(j.at("family").get<std::string>()));
  if (j.contains("link")) f.link = parse_link(j.at("link").get<std::string>());
  return f;
}

void reject_unknown(const Json& j, const std::set<std::string>& known, const std::string& where) {
  if (!j.is_object()) throw ParseError(where + " must be an object");
  for (const auto& [key, value] : j.items())
    if (!known.count(key)) throw ParseError("unknown key '" + key + "' in " + where);
}

void apply_model(ModelSpec& m, const Json& j) {
  reject_unknown(j,
                 {"family", "link", "correlation", "terms", "spline_degree", "basis_size",
                  "time_smooth", "carryover_smooth", "carryover_reference", "max_iterations",
                  "tolerance"},
                 "model");
  if (j.contains("family")) m.family = family_from(j);
  else if (j.contains("link")) m.family.link = parse_link(j.at("link").get<std::string>());
  if (j.contains("correlation")) m.correlation = parse_correlation(j.at("correlation").get<std::string>());
  if (j.contains("terms")) {
    m.terms.clear();
    for (const auto& t : j.at("terms")) m.terms.push_back(Term::parse(t.get<std::string>()));
  }
  if (j.contains("spline_degree")) m.spline.degree = j.at("spline_degree").get<int>();
  if (j.contains("basis_size")) {
    if (j.at("basis_size").is_null()) m.spline.basis_size.reset();
    else m.spline.basis_size = j.at("basis_size").get<int>();
  }
  if (j.contains("time_smooth")) m.spline.time_smooth = j.at("time_smooth").get<bool>();
  if (j.contains("carryover_smooth")) m.carryover.smooth = j.at("carryover_smooth").get<bool>();
  if (j.contains("carryover_reference"))
    m.carryover.reference = j.at("carryover_reference").get<std::string>();
  if (j.contains("max_iterations")) m.max_iterations = j.at("max_iterations").get<int>();
  if (j.contains("tolerance")) m.tolerance = j.at("tolerance").get<double>();
}

void apply_study(RunConfig& c, const Json& j) {
  reject_unknown(j,
                 {"subjects_per_sequence", "treatment_effects", "replicates", "models", "latent_alpha",
                  "observations_per_period", "period_effects", "level"},
                 "simulate");
  auto& s = c.study;
  if (j.contains("subjects_per_sequence"))
    s.subjects_per_sequence = j.at("subjects_per_sequence").get<std::vector<int>>();
  if (j.contains("treatment_effects"))
    s.treatment_effects = j.at("treatment_effects").get<std::vector<double>>();
  if (j.contains("replicates")) s.replicates = j.at("replicates").get<int>();
  if (j.contains("models")) {
    c.study_models.clear();
    for (const auto& m : j.at("models")) c.study_models.push_back(parse_model_variant(m.get<std::string>()));
  }
  if (j.contains("latent_alpha")) s.base.latent_alpha = j.at("latent_alpha").get<double>();
  if (j.contains("observations_per_period"))
    s.base.observations_per_period = j.at("observations_per_period").get<int>();
  if (j.contains("period_effects")) {
    const auto p = j.at("period_effects").get<std::vector<double>>();
    if (p.size() != 2) throw ParseError("period_effects needs two values");
    s.base.period2_effect = p[0];
    s.base.period3_effect = p[1];
  }
  if (j.contains("level")) s.level = j.at("level").get<double>();
}

}  // namespace

void apply_json(RunConfig& c, const Json& j) {
  reject_unknown(j,
                 {"command", "input", "output", "seed", "formats", "model", "compare", "diagnostics",
                  "simulate"},
                 "config");
  try {
    if (j.contains("command")) c.command = parse_command(j.at("command").get<std::string>());
    if (j.contains("input")) c.input = j.at("input").get<std::string>();
    if (j.contains("output")) c.output = j.at("output").get<std::string>();
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("formats")) {
      c.write_tables = c.write_json = false;
      for (const auto& f : j.at("formats")) {
        const auto name = f.get<std::string>();
        if (name == "tables") c.write_tables = true;
        else if (name == "json") c.write_json = true;
        else throw ParseError("unknown report format '" + name + "'");
      }
    }
    if (j.contains("model")) apply_model(c.model, j.at("model"));
    if (j.contains("compare")) {
      c.compare.clear();
      for (const auto& f : j.at("compare")) {
        reject_unknown(f, {"family", "link"}, "compare entry");
        c.compare.push_back(family_from(f));
      }
    }
    if (j.contains("diagnostics")) {
      const Json& d = j.at("diagnostics");
      reject_unknown(d, {"simulations", "level", "curve_points"}, "diagnostics");
      if (d.contains("simulations")) c.qq_simulations = d.at("simulations").get<int>();
      if (d.contains("level")) c.level = d.at("level").get<double>();
      if (d.contains("curve_points")) c.curve_points = d.at("curve_points").get<int>();
    }
    if (j.contains("simulate")) apply_study(c, j.at("simulate"));
  } catch (const Json::exception& e) {
    throw ParseError(std::string("config: ") + e.what());
  }
}

RunConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open config '" + path.string() + "'");
  Json j;
  try {
    j = Json::parse(in);
  } catch (const Json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  RunConfig c;
  apply_json(c, j);
  return c;
}

Json to_json(const RunConfig& c) {
  Json j;
  j["command"] = to_string(c.command);
  j["input"] = c.input.string();
  j["seed"] = c.seed;
  Json m;
  m["family"] = to_string(c.model.family.kind);
  m["link"] = to_string(c.model.family.link);
  m["correlation"] = to_string(c.model.correlation);
  Json terms = Json::array();
  for (const auto& t : c.model.terms) terms.push_back(t.to_string());
  m["terms"] = terms;
  m["spline_degree"] = c.model.spline.degree;
  m["basis_size"] = c.model.spline.basis_size ? Json(*c.model.spline.basis_size) : Json(nullptr);
  m["time_smooth"] = c.model.spline.time_smooth;
  m["carryover_smooth"] = c.model.carryover.smooth;
  m["carryover_reference"] = c.model.carryover.reference;
  m["max_iterations"] = c.model.max_iterations;
  m["tolerance"] = c.model.tolerance;
  j["model"] = m;
  if (c.command == Command::qic_compare) {
    Json cmp = Json::array();
    for (const auto& f : c.compare) cmp.push_back({{"family", to_string(f.kind)}, {"link", to_string(f.link)}});
    j["compare"] = cmp;
  }
  if (c.command == Command::simulate) {
    Json s;
    s["subjects_per_sequence"] = c.study.subjects_per_sequence;
    s["treatment_effects"] = c.study.treatment_effects;
    s["replicates"] = c.study.replicates;
    Json models = Json::array();
    for (auto v : c.study_models) models.push_back(to_string(v));
    s["models"] = models;
    s["latent_alpha"] = c.study.base.latent_alpha;
    s["observations_per_period"] = c.study.base.observations_per_period;
    s["period_effects"] = {c.study.base.period2_effect, c.study.base.period3_effect};
    s["level"] = c.study.level;
    j["simulate"] = s;
  } else {
    j["diagnostics"] = {{"simulations", c.qq_simulations}, {"level", c.level}, {"curve_points", c.curve_points}};
  }
  return j;
}

namespace {

std::string file_stem(const std::string& label) {
  std::string out;
  for (char ch : label)
    out += std::isalnum(static_cast<unsigned char>(ch)) ? static_cast<char>(std::tolower(ch)) : '_';
  return out;
}

class Writer {
 public:
  Writer(const RunConfig& c, std::ostream& log) : c_(c), log_(log) { fs::create_directories(c.output); }

  void table(const Table& t, const std::string& file) {
    if (c_.write_tables) {
      save_table(t, c_.output / file);
      log_ << "wrote " << (c_.output / file).string() << '\n';
    }
  }

  void json(const Json& j) {
    if (!c_.write_json) return;
    const fs::path p = c_.output / "report.json";
    std::ofstream out(p, std::ios::binary);
    if (!out) throw Error("cannot write '" + p.string() + "'");
    out << j.dump(2) << '\n';
    log_ << "wrote " << p.string() << '\n';
  }

 private:
  const RunConfig& c_;
  std::ostream& log_;
};

Json qic_json(const std::optional<QicResult>& q) {
  if (!q) return nullptr;
  return {{"qic", q->qic}, {"quasi_likelihood", q->quasi_likelihood},
          {"kernel", q->kernel}, {"trace_penalty", q->trace_penalty}};
}

std::optional<QicResult> try_qic(const FitResult& fit, std::string& note) {
  try {
    return qic(fit);
  } catch (const Error& e) {
    note = e.what();
    return std::nullopt;
  }
}

int run_fit(const RunConfig& c, std::ostream& log, bool residuals_only) {
  const LongitudinalDataset data = load_csv(c.input);
  const FitResult res = fit(build_design(data, c.model), c.model);
  Writer w(c, log);
  Json report;
  report["config"] = to_json(c);
  report["fit"] = fit_json(res);
  if (!res.converged) log << "warning: fit did not converge after " << res.iterations << " cycles\n";

  const auto resid = standardized_residuals(res);
  const auto defined = defined_values(resid);
  std::optional<QqBand> band;
  if (defined.size() >= 10) band = qq_band_data(defined, c.qq_simulations, c.level, c.seed);

  if (!residuals_only) {
    w.table(coefficient_table(res), "coefficients.csv");
    std::string note;
    const auto q = try_qic(res, note);
    report["qic"] = qic_json(q);
    if (!note.empty()) report["qic_note"] = note;
    Json curves = Json::array();
    for (std::size_t b = 0; b < res.model->blocks().size(); ++b) {
      if (!res.model->blocks()[b].active()) continue;
      const auto curve = res.smooth_curve(b, c.curve_points, c.level);
      const Table t = smooth_curve_table(curve);
      w.table(t, "smooth_" + file_stem(curve.label) + ".csv");
      curves.push_back({{"label", curve.label}, {"points", to_json(t)}});
    }
    report["smooth_curves"] = curves;
  }
  w.table(residual_table(resid), "residuals.csv");
  report["residuals"] = to_json(residual_table(resid));
  if (band) {
    w.table(qq_table(*band), "qq.csv");
    report["qq"] = to_json(qq_table(*band));
  }
  w.json(report);
  return res.converged ? 0 : 2;
}

int run_compare(const RunConfig& c, std::ostream& log) {
  const LongitudinalDataset data = load_csv(c.input);
  std::vector<QicComparison> rows;
  bool all_converged = true;
  for (const auto& family : c.compare) {
    ModelSpec spec = c.model;
    spec.family = family;
    QicComparison row;
    row.label = family.name();
    row.family = family;
    try {
      const FitResult res = fit(build_design(data, spec), spec);
      row.converged = res.converged;
      all_converged = all_converged && res.converged;
      std::string note;
      row.qic = try_qic(res, note);
      if (!res.converged) note = "not converged" + (note.empty() ? "" : "; " + note);
      if (!note.empty()) row.error = note;
    } catch (const Error& e) {
      all_converged = false;
      row.error = e.what();
    }
    log << row.label << ": " << (row.qic ? format_number(row.qic->qic) : row.error.value_or("failed"))
        << '\n';
    rows.push_back(std::move(row));
  }
  const Table t = qic_table(rows);
  Writer w(c, log);
  w.table(t, "qic_compare.csv");
  Json report;
  report["config"] = to_json(c);
  report["comparison"] = to_json(t);
  w.json(report);
  return all_converged ? 0 : 2;
}

int run_simulate(const RunConfig& c, std::ostream& log) {
  StudyGrid grid = c.study;
  grid.base.seed = c.seed;
  int last = -1;
  const StudySummary s = run_study(grid, c.study_models, [&](ModelVariant, int n, double e, int r) {
    if (r % 50 == 0 && r != last) {
      log << "n=" << n << " beta1=" << format_number(e) << " replicate " << r << '\n';
      last = r;
    }
  });
  Writer w(c, log);
  w.table(coverage_table(s, false), "coverage_treatment.csv");
  w.table(coverage_table(s, true), "coverage_period.csv");
  w.table(rmse_table(s), "rmse.csv");
  Json report;
  report["config"] = to_json(c);
  report["study"] = study_json(s);
  const double runs = static_cast<double>(grid.replicates) * grid.subjects_per_sequence.size() *
                      grid.treatment_effects.size() * c.study_models.size();
  report["failure_rate"] = s.failures.size() / runs;
  w.json(report);
  return 0;
}

}  // namespace

int run(const RunConfig& c, std::ostream& log) {
  c.validate();
  switch (c.command) {
    case Command::fit: return run_fit(c, log, false);
    case Command::residuals: return run_fit(c, log, true);
    case Command::qic_compare: return run_compare(c, log);
    case Command::simulate: return run_simulate(c, log);
  }
  return 1;
}

}  // namespace sgee
