#pragma once

#include <string>
#include <vector>

namespace lrnet {

using CsvRow = std::vector<std::string>;

/// RFC-4180-style serialization: header first, fields quoted when they
/// contain commas/quotes/newlines, '\n' line endings, newline-terminated.
std::string csv_to_string(const CsvRow& header, const std::vector<CsvRow>& rows);
void emit_metrics(const CsvRow& header, const std::vector<CsvRow>& rows,
                  const std::string& path);

/// Parses what emit_metrics writes; first row is the header.
std::vector<CsvRow> parse_csv(const std::string& text);
std::vector<CsvRow> parse_csv_file(const std::string& path);

/// Shortest round-trip decimal representation.
std::string format_double(double v);

}  // namespace lrnet
