#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "errors.hpp"
#include "io.hpp"
#include "linalg.hpp"
#include "model.hpp"

namespace cgbound {

/// INI experiment config. Keys are addressed as "section.key"; every lookup failure names that path.
class Config {
public:
  Config() = default;

  static Config from_text(const std::string& text) {
    Config c;
    std::istringstream in(text);
    try {
      boost::property_tree::ini_parser::read_ini(in, c.tree_);
    } catch (const boost::property_tree::ini_parser_error& e) {
      throw ConfigError("config", std::string("malformed INI: ") + e.message() + " at line " + std::to_string(e.line()));
    }
    c.text_ = text;
    return c;
  }

  static Config from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config", "cannot read " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return from_text(ss.str());
  }

  bool has(const std::string& key) const { return bool(tree_.get_optional<std::string>(key)); }

  std::string str(const std::string& key) const {
    auto v = tree_.get_optional<std::string>(key);
    if (!v) throw ConfigError(key, "required field is missing");
    return trim(*v);
  }
  std::string str(const std::string& key, const std::string& def) const { return has(key) ? str(key) : def; }

  double num(const std::string& key) const { return parse_num(key, str(key)); }
  double num(const std::string& key, double def) const { return has(key) ? num(key) : def; }

  double positive(const std::string& key) const {
    const double v = num(key);
    if (!(v > 0.0)) throw ConfigError(key, "must be positive");
    return v;
  }
  double positive(const std::string& key, double def) const { return has(key) ? positive(key) : def; }

  long integer(const std::string& key, long def) const {
    if (!has(key)) return def;
    const double v = num(key);
    if (v != std::floor(v)) throw ConfigError(key, "must be an integer");
    return long(v);
  }

  bool flag(const std::string& key, bool def) const {
    if (!has(key)) return def;
    const std::string v = str(key);
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError(key, "expected true or false, got '" + v + "'");
  }

  /// Whitespace- or comma-separated numbers.
  std::vector<double> list(const std::string& key) const {
    std::string s = str(key);
    for (char& ch : s)
      if (ch == ',') ch = ' ';
    std::istringstream in(s);
    std::vector<double> out;
    std::string tok;
    while (in >> tok) out.push_back(parse_num(key, tok));
    return out;
  }
  std::vector<double> list(const std::string& key, std::vector<double> def) const {
    return has(key) ? list(key) : def;
  }

  std::vector<std::string> words(const std::string& key, std::vector<std::string> def = {}) const {
    if (!has(key)) return def;
    std::string s = str(key);
    for (char& ch : s)
      if (ch == ',') ch = ' ';
    std::istringstream in(s);
    std::vector<std::string> out;
    std::string tok;
    while (in >> tok) out.push_back(tok);
    return out;
  }

  void set(const std::string& key, const std::string& value) {
    tree_.put(key, value);
    overrides_.push_back(key + "=" + value);
  }

  /// Hash of the config text plus command-line overrides, in order.
  std::string hash() const {
    std::string s = text_;
    for (const auto& o : overrides_) s += "\n#override " + o;
    return hex64(fnv1a(s));
  }

  const std::string& text() const { return text_; }
  const std::vector<std::string>& overrides() const { return overrides_; }

  json to_json() const {
    json j = json::object();
    for (const auto& [sec, node] : tree_) {
      json s = json::object();
      for (const auto& [k, v] : node) s[k] = trim(v.data());
      j[sec] = s;
    }
    return j;
  }

private:
  static std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r\"");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r\"");
    return s.substr(a, b - a + 1);
  }
  static double parse_num(const std::string& key, const std::string& s) {
    try {
      std::size_t pos = 0;
      const double v = std::stod(s, &pos);
      if (pos != s.size() || !std::isfinite(v)) throw std::invalid_argument(s);
      return v;
    } catch (const std::exception&) {
      throw ConfigError(key, "expected a number, got '" + s + "'");
    }
  }

  boost::property_tree::ptree tree_;
  std::string text_;
  std::vector<std::string> overrides_;
};

// ---------------------------------------------------------------- catalog lookup

/// [physics] potential = coupled_quadratic | double_well | quadratic | expression, with its parameters.
inline Potential potential_from_config(const Config& c, std::optional<double> eps_override = std::nullopt) {
  const std::string kind = c.str("physics.potential", "coupled_quadratic");
  const double eps = eps_override ? *eps_override : c.positive("physics.eps", 0.1);
  if (kind == "coupled_quadratic")
    return catalog::coupled_quadratic(eps, c.num("physics.c", 0.25), c.num("physics.a", 1.0), c.positive("physics.delta", 1.0));
  if (kind == "double_well")
    return catalog::double_well(eps, c.num("physics.c", 0.25), c.positive("physics.h", 1.0), c.positive("physics.delta", 1.0));
  if (kind == "quadratic") {
    auto k = c.list("physics.K");
    const long d = std::lround(std::sqrt(double(k.size())));
    if (d * d != long(k.size()) || d < 1) throw ConfigError("physics.K", "expected d*d entries");
    Mat K(d, d);
    for (long i = 0; i < d; ++i)
      for (long j = 0; j < d; ++j) K(i, j) = k[std::size_t(i * d + j)];
    return catalog::quadratic(K);
  }
  if (kind == "expression") return catalog::expression(c.str("physics.expr"), int(c.integer("physics.dim", 2)));
  throw ConfigError("physics.potential", "unknown potential '" + kind + "'");
}

/// [map] kind = coordinate | rotated | affine | tanh | parabola | expression.
inline CoarseMap map_from_config(const Config& c, int dim) {
  const std::string kind = c.str("map.kind", "coordinate");
  if (kind == "coordinate") {
    const long idx = c.integer("map.index", 0);
    if (idx < 0 || idx >= dim) throw ConfigError("map.index", "out of range");
    return catalog::coordinate(dim, int(idx));
  }
  if (kind == "rotated") {
    if (dim != 2) throw ConfigError("map.kind", "rotated map needs d = 2");
    return catalog::rotated(c.num("map.theta", 0.0));
  }
  if (kind == "affine") {
    auto t = c.list("map.T");
    if (long(t.size()) != dim) throw ConfigError("map.T", "expected one row of d entries (k = 1)");
    Mat T(1, dim);
    for (int j = 0; j < dim; ++j) T(0, j) = t[std::size_t(j)];
    return catalog::affine(T, Vec::Constant(1, c.num("map.tau", 0.0)));
  }
  if (kind == "tanh") return catalog::tanh_graph(c.num("map.a", 1.0));
  if (kind == "parabola") return catalog::parabola_graph(c.num("map.a", 0.1));
  if (kind == "expression") return catalog::expression_map(c.str("map.expr"), dim);
  throw ConfigError("map.kind", "unknown map '" + kind + "'");
}

}  // namespace cgbound
