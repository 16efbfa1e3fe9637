#include "sgee/io.hpp"

#include <array>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "sgee/errors.hpp"

namespace sgee {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

constexpr std::array<const char*, 6> kRequired{"subject", "sequence", "period",
                                               "time",    "treatment", "response"};

}  // namespace

std::vector<std::string> split_csv_record(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  bool was_quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
      was_quoted = true;
    } else if (c == ',') {
      fields.push_back(was_quoted ? cur : trim(cur));
      cur.clear();
      was_quoted = false;
    } else {
      cur += c;
    }
  }
  if (quoted) throw ParseError("unterminated quote in record: " + line);
  fields.push_back(was_quoted ? cur : trim(cur));
  return fields;
}

std::string csv_field(const std::string& value) {
  const bool needs = value.find_first_of(",\"\n") != std::string::npos ||
                     (!value.empty() && (value.front() == ' ' || value.back() == ' '));
  if (!needs) return value;
  std::string out = "\"";
  for (char c : value) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

std::string format_number(double value) {
  if (std::isnan(value)) return "nan";
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", value);
  return buf;
}

std::string format_display(double value) {
  if (!std::isfinite(value)) return format_number(value);
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.2f", value);
  std::string s = buf;
  if (s == "-0.00") s = "0.00";
  return s;
}

double parse_number(const std::string& field, const std::string& what) {
  const std::string f = trim(field);
  if (f == "nan" || f == "NaN") return std::nan("");
  if (f == "inf") return INFINITY;
  if (f == "-inf") return -INFINITY;
  double v = 0.0;
  const char* end = f.data() + f.size();
  auto [ptr, ec] = std::from_chars(f.data(), end, v);
  if (f.empty() || ec != std::errc() || ptr != end)
    throw ParseError(what + ": '" + field + "' is not a number");
  return v;
}

LongitudinalDataset read_csv(std::istream& in, const std::string& source) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError(source + ": empty file, header row expected");
  const auto header = split_csv_record(line);
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i].empty()) throw ParseError(source + ": empty column name in header");
    if (!col.emplace(header[i], i).second)
      throw ParseError(source + ": duplicate column '" + header[i] + "'");
  }
  std::string missing;
  for (const char* name : kRequired)
    if (!col.count(name)) missing += (missing.empty() ? "" : ", ") + std::string(name);
  if (!missing.empty()) throw ParseError(source + ": missing required column(s): " + missing);

  std::vector<std::pair<std::string, std::size_t>> covariates;
  for (std::size_t i = 0; i < header.size(); ++i)
    if (std::find(kRequired.begin(), kRequired.end(), header[i]) == kRequired.end())
      covariates.emplace_back(header[i], i);

  std::vector<SubjectRecord> subjects;
  std::map<std::string, std::size_t> where;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto f = split_csv_record(line);
    const std::string at = source + ":" + std::to_string(line_no);
    if (f.size() != header.size())
      throw ParseError(at + ": expected " + std::to_string(header.size()) + " fields, found " +
                       std::to_string(f.size()));
    const std::string& id = f[col["subject"]];
    if (id.empty()) throw ParseError(at + ": empty subject id");
    const auto sequence = split_sequence(f[col["sequence"]]);
    if (sequence.empty()) throw ParseError(at + ": empty sequence");

    auto [it, fresh] = where.emplace(id, subjects.size());
    if (fresh) {
      subjects.push_back(SubjectRecord{id, sequence, {}});
    } else if (subjects[it->second].sequence != sequence) {
      throw ParseError(at + ": subject '" + id + "' changes sequence");
    }

    Observation o;
    const double period = parse_number(f[col["period"]], at + ": period");
    if (period != std::floor(period) || period < 1 || period > static_cast<double>(sequence.size()))
      throw ParseError(at + ": period " + f[col["period"]] + " outside 1.." +
                       std::to_string(sequence.size()));
    o.period = static_cast<int>(period);
    o.time = parse_number(f[col["time"]], at + ": time");
    o.treatment = f[col["treatment"]];
    o.response = parse_number(f[col["response"]], at + ": response");
    for (const auto& [name, i] : covariates) o.covariates[name] = parse_number(f[i], at + ": " + name);
    subjects[it->second].observations.push_back(std::move(o));
  }
  if (subjects.empty()) throw ParseError(source + ": no data rows");
  try {
    return LongitudinalDataset(std::move(subjects));
  } catch (const DesignError& e) {
    throw DesignError(source + ": " + e.what());
  }
}

LongitudinalDataset load_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open '" + path.string() + "'");
  return read_csv(in, path.string());
}

void write_csv(const LongitudinalDataset& data, std::ostream& out) {
  out << "subject,sequence,period,time,treatment,response";
  for (const auto& c : data.covariate_names()) out << ',' << csv_field(c);
  out << '\n';
  for (const auto& s : data.subjects()) {
    const std::string seq = csv_field(s.sequence_label());
    for (const auto& o : s.observations) {
      out << csv_field(s.id) << ',' << seq << ',' << o.period << ',' << format_number(o.time) << ','
          << csv_field(o.treatment) << ',' << format_number(o.response);
      for (const auto& c : data.covariate_names()) out << ',' << format_number(o.covariates.at(c));
      out << '\n';
    }
  }
}

void save_csv(const LongitudinalDataset& data, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  write_csv(data, out);
}

}  // namespace sgee
