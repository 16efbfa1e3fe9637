#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "sgee/dataset.hpp"

namespace sgee {

/// Splits one CSV record. Fields may be double-quoted with "" escapes.
std::vector<std::string> split_csv_record(const std::string& line);
/// Quotes a field when it contains a comma, quote or leading/trailing blank.
std::string csv_field(const std::string& value);
/// Shortest-safe round-trip formatting ("%.17g").
std::string format_number(double value);
/// Fixed two-decimal display formatting.
std::string format_display(double value);
/// Parses a whole field as a double; throws ParseError with `what` on failure.
double parse_number(const std::string& field, const std::string& what);

/// Long-format crossover data. Required columns: subject, sequence, period,
/// time, treatment, response. Every other column is a numeric covariate
/// (for example a baseline measurement).
LongitudinalDataset read_csv(std::istream& in, const std::string& source = "<stream>");
LongitudinalDataset load_csv(const std::filesystem::path& path);

void write_csv(const LongitudinalDataset& data, std::ostream& out);
void save_csv(const LongitudinalDataset& data, const std::filesystem::path& path);

}  // namespace sgee
