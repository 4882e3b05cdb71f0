#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace dg {

/// Plain comma-separated table with a header row; no quoting.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(std::string_view name) const;
};

CsvTable read_csv(const std::filesystem::path& path);
void write_csv(const std::filesystem::path& path, const CsvTable& table);

double parse_double(std::string_view s);
/// Shortest text that round-trips the value exactly.
std::string format_double(double v);

}  // namespace dg
