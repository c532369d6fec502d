#pragma once

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "errors.hpp"
#include "grid.hpp"
#include "json.hpp"

namespace cgbound {

using json = nlohmann::ordered_json;

/// Shortest round-trip decimal form; used for every CSV number so output is byte-stable.
inline std::string fmt_num(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[40];
  for (int prec = 15; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, x);
    if (std::strtod(buf, nullptr) == x) break;
  }
  return buf;
}

class CsvWriter {
public:
  explicit CsvWriter(const std::filesystem::path& path) : out_(path) {
    if (!out_) throw Error(ErrorKind::config, "cannot open " + path.string() + " for writing");
  }
  void header(const std::vector<std::string>& cols) { row_text(cols); }
  void row_text(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) out_ << (i ? "," : "") << cells[i];
    out_ << '\n';
  }
  void row(const std::vector<double>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) out_ << (i ? "," : "") << fmt_num(cells[i]);
    out_ << '\n';
  }

private:
  std::ofstream out_;
};

inline void write_json(const std::filesystem::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::config, "cannot open " + path.string() + " for writing");
  out << j.dump(2) << '\n';
}

inline json grid_to_json(const Grid& g) {
  json axes = json::array();
  for (const auto& a : g.axes) axes.push_back({{"lo", a.lo}, {"hi", a.hi}, {"n", a.n}});
  return axes;
}

/// Density as CSV (cell centers, value) preceded by one '#'-prefixed JSON header line.
inline void write_density_csv(const std::filesystem::path& path, const GridDensity& d) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::config, "cannot open " + path.string() + " for writing");
  json h = {{"grid", grid_to_json(d.grid)}, {"time", d.time}};
  out << "# " << h.dump() << '\n';
  out << (d.grid.dim() == 1 ? "z,value\n" : "q1,q2,value\n");
  for (std::size_t i = 0; i < d.values.size(); ++i) {
    Vec c = d.grid.center(i);
    for (long a = 0; a < c.size(); ++a) out << fmt_num(c(a)) << ',';
    out << fmt_num(d.values[i]) << '\n';
  }
}

/// FNV-1a 64-bit, for config hashes in manifests.
inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::string hex64(std::uint64_t x) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(x));
  return buf;
}

}  // namespace cgbound
