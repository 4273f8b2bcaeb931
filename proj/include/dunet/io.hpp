#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace dunet {

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Writes to a sibling temp file and renames it over `path`.
void write_atomic(const std::filesystem::path& path, std::string_view content);
std::string read_file(const std::filesystem::path& path);

/// Shortest text that parses back to the same double.
std::string format_real(double v);

/// Comma-separated table. The first line of the text form is
/// "# dunet-<kind> v<version>", the second the column names.
struct CsvTable {
  std::string kind;
  int version = 1;
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;

  int column(std::string_view name) const;
};

std::string format_csv(const CsvTable& t);
/// Accepts the versioned form and plain header+rows text; '#' lines are
/// skipped after the optional version line.
CsvTable parse_csv(std::string_view text);

}  // namespace dunet
