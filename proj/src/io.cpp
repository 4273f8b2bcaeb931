#include "dunet/io.hpp"

#include <charconv>
#include <fstream>
#include <sstream>
#include <system_error>

namespace dunet {

void write_atomic(const std::filesystem::path& path, std::string_view content) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open " + tmp.string() + " for writing");
    f.write(content.data(), static_cast<std::streamsize>(content.size()));
    f.flush();
    if (!f) throw IoError("short write to " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw IoError("cannot move " + tmp.string() + " into place");
  }
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

std::string format_real(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc{}) throw IoError("cannot format number");
  return {buf, p};
}

int CsvTable::column(std::string_view name) const {
  for (std::size_t i = 0; i < columns.size(); ++i) {
    if (columns[i] == name) return static_cast<int>(i);
  }
  return -1;
}

namespace {

std::string join(const std::vector<std::string>& cells) {
  std::string out;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i) out += ',';
    out += cells[i];
  }
  return out;
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) {
    const auto b = cell.find_first_not_of(" \t\r");
    const auto e = cell.find_last_not_of(" \t\r");
    out.push_back(b == std::string::npos ? "" : cell.substr(b, e - b + 1));
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

std::string format_csv(const CsvTable& t) {
  std::string out = "# dunet-" + t.kind + " v" + std::to_string(t.version) + "\n";
  out += join(t.columns) + "\n";
  for (const auto& r : t.rows) {
    if (r.size() != t.columns.size()) throw IoError("csv row width does not match the header");
    out += join(r) + "\n";
  }
  return out;
}

CsvTable parse_csv(std::string_view text) {
  CsvTable t;
  std::istringstream in{std::string(text)};
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      if (first) {
        const auto dash = line.find("dunet-");
        const auto v = line.rfind(" v");
        if (dash != std::string::npos && v != std::string::npos && v > dash) {
          t.kind = line.substr(dash + 6, v - dash - 6);
          t.version = std::atoi(line.c_str() + v + 2);
        }
      }
      first = false;
      continue;
    }
    first = false;
    if (t.columns.empty()) {
      t.columns = split(line);
      continue;
    }
    auto row = split(line);
    if (row.size() != t.columns.size()) {
      throw IoError("csv row '" + line + "' has " + std::to_string(row.size()) +
                    " cells, expected " + std::to_string(t.columns.size()));
    }
    t.rows.push_back(std::move(row));
  }
  if (t.columns.empty()) throw IoError("csv has no header");
  return t;
}

}  // namespace dunet
