#include "fbridge/io.hpp"

#include <json.hpp>

#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

namespace fbridge::io {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

double to_double(const std::string& text, const std::string& what) {
  const std::string t = trim(text);
  if (t.empty()) throw ConfigError(what + ": empty number");
  char* end = nullptr;
  errno = 0;
  const double v = std::strtod(t.c_str(), &end);
  if (end != t.c_str() + t.size() || errno == ERANGE)
    throw ConfigError(what + ": cannot parse '" + t + "' as a number");
  return v;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, sep)) out.push_back(cur);
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

nlohmann::json matrix_json(const Mat& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(row);
  }
  return rows;
}

Mat json_matrix(const nlohmann::json& j, const std::string& what) {
  if (!j.is_array()) throw ConfigError(what + ": expected an array of rows");
  const auto r = static_cast<Eigen::Index>(j.size());
  const auto c = r ? static_cast<Eigen::Index>(j[0].size()) : 0;
  Mat m(r, c);
  for (Eigen::Index i = 0; i < r; ++i) {
    if (!j[i].is_array() || static_cast<Eigen::Index>(j[i].size()) != c)
      throw ConfigError(what + ": ragged matrix");
    for (Eigen::Index k = 0; k < c; ++k) m(i, k) = j[i][k].get<double>();
  }
  return m;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream os(path);
  if (!os) throw ConfigError("cannot open '" + path + "' for writing");
  return os;
}

}  // namespace

KeyValueConfig KeyValueConfig::parse(std::istream& in, const std::string& origin) {
  KeyValueConfig cfg;
  cfg.origin_ = origin;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
    if (cfg.values_.count(key))
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": duplicate key '" + key + "'");
    cfg.values_[key] = trim(line.substr(eq + 1));
  }
  return cfg;
}

KeyValueConfig KeyValueConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  return parse(in, path);
}

std::string KeyValueConfig::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError(origin_ + ": missing required key '" + key + "'");
  return it->second;
}

std::string KeyValueConfig::get(const std::string& key, const std::string& fallback) const {
  auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

double KeyValueConfig::get_double(const std::string& key, double fallback) const {
  return has(key) ? to_double(get(key), origin_ + ": " + key) : fallback;
}

long long KeyValueConfig::get_int(const std::string& key, long long fallback) const {
  if (!has(key)) return fallback;
  const std::string t = get(key);
  char* end = nullptr;
  const long long v = std::strtoll(t.c_str(), &end, 10);
  if (t.empty() || end != t.c_str() + t.size())
    throw ConfigError(origin_ + ": " + key + ": cannot parse '" + t + "' as an integer");
  return v;
}

Vec KeyValueConfig::get_vector(const std::string& key) const {
  return parse_vector(get(key), origin_ + ": " + key);
}

Mat KeyValueConfig::get_matrix(const std::string& key) const {
  return parse_matrix(get(key), origin_ + ": " + key);
}

void KeyValueConfig::require_known(const std::set<std::string>& known) const {
  for (const auto& [k, _] : values_)
    if (!known.count(k)) throw ConfigError(origin_ + ": unknown key '" + k + "'");
}

Vec parse_vector(const std::string& text, const std::string& what) {
  std::string t = text;
  for (char& c : t)
    if (c == ',') c = ' ';
  std::istringstream is(t);
  std::vector<double> vals;
  std::string tok;
  while (is >> tok) vals.push_back(to_double(tok, what));
  return Eigen::Map<Vec>(vals.data(), static_cast<Eigen::Index>(vals.size()));
}

Mat parse_matrix(const std::string& text, const std::string& what) {
  std::vector<Vec> rows;
  for (const auto& r : split(text, ';')) {
    if (trim(r).empty()) continue;
    rows.push_back(parse_vector(r, what));
  }
  if (rows.empty()) throw ConfigError(what + ": empty matrix");
  Mat m(static_cast<Eigen::Index>(rows.size()), rows[0].size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != m.cols()) throw ConfigError(what + ": rows of different length");
    m.row(static_cast<Eigen::Index>(i)) = rows[i].transpose();
  }
  return m;
}

std::string format_double(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

std::string sidecar_path(const std::string& csv_path) {
  std::filesystem::path p(csv_path);
  p.replace_extension(".json");
  return p.string();
}

void write_observations(const std::string& csv_path, const ObservationScheme& scheme, int dim_state) {
  Eigen::Index width = 0;
  for (const auto& v : scheme.values) width = std::max(width, v.size());
  std::ofstream os = open_out(csv_path);
  os << "time";
  for (Eigen::Index j = 0; j < width; ++j) os << ",v" << j + 1;
  os << '\n';
  nlohmann::json side;
  side["dim_state"] = dim_state;
  side["observations"] = nlohmann::json::array();
  for (std::size_t i = 0; i < scheme.size(); ++i) {
    os << format_double(scheme.times[i]);
    for (Eigen::Index j = 0; j < width; ++j) {
      os << ',';
      if (j < scheme.values[i].size()) os << format_double(scheme.values[i][j]);
    }
    os << '\n';
    side["observations"].push_back({{"time", scheme.times[i]},
                                    {"L", matrix_json(scheme.projections[i])},
                                    {"Sigma", matrix_json(scheme.noise_covs[i])}});
  }
  std::ofstream js = open_out(sidecar_path(csv_path));
  js << side.dump(2) << '\n';
}

ObservationScheme read_observations(const std::string& csv_path, int* dim_state) {
  std::ifstream in(csv_path);
  if (!in) throw ConfigError("cannot open observation file '" + csv_path + "'");
  const std::string side_path = sidecar_path(csv_path);
  std::ifstream sin(side_path);
  if (!sin) throw ConfigError("missing observation sidecar '" + side_path + "'");
  nlohmann::json side;
  try {
    side = nlohmann::json::parse(sin);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(side_path + ": " + e.what());
  }
  if (!side.contains("observations") || !side["observations"].is_array())
    throw ConfigError(side_path + ": expected an 'observations' array");
  if (dim_state && side.contains("dim_state")) *dim_state = side["dim_state"].get<int>();

  std::string line;
  if (!std::getline(in, line) || trim(line).rfind("time", 0) != 0)
    throw ConfigError(csv_path + ": header must start with 'time'");
  ObservationScheme scheme;
  std::size_t i = 0;
  int lineno = 1;
  const auto& entries = side["observations"];
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const std::string where = csv_path + ":" + std::to_string(lineno);
    if (i >= entries.size()) throw ConfigError(where + ": more rows than sidecar entries");
    const auto cells = split(trim(line), ',');
    const double t = to_double(cells.at(0), where);
    const auto& e = entries[i];
    const Mat L = json_matrix(e.at("L"), side_path + " entry " + std::to_string(i) + " L");
    const Mat Sigma = json_matrix(e.at("Sigma"), side_path + " entry " + std::to_string(i) + " Sigma");
    if (e.contains("time") && e["time"].get<double>() != t)
      throw ConfigError(where + ": time differs from the sidecar");
    Vec v(L.rows());
    for (Eigen::Index j = 0; j < L.rows(); ++j) {
      const auto c = static_cast<std::size_t>(j) + 1;
      if (c >= cells.size() || trim(cells[c]).empty())
        throw ConfigError(where + ": missing value v" + std::to_string(j + 1));
      v[j] = to_double(cells[c], where);
    }
    scheme.push_back(t, L, Sigma, v);
    ++i;
  }
  if (i != entries.size()) throw ConfigError(csv_path + ": fewer rows than sidecar entries");
  return scheme;
}

void write_path_csv(const std::string& path, const std::vector<PathSegment>& segments) {
  std::ofstream os = open_out(path);
  if (segments.empty()) return;
  const Eigen::Index d = segments.front().front().size();
  os << "time";
  for (Eigen::Index j = 0; j < d; ++j) os << ",x" << j + 1;
  os << '\n';
  for (std::size_t s = 0; s < segments.size(); ++s) {
    const auto& seg = segments[s];
    for (std::size_t k = s == 0 ? 0 : 1; k < seg.values.size(); ++k) {
      os << format_double(seg.grid[k]);
      for (Eigen::Index j = 0; j < d; ++j) os << ',' << format_double(seg.values[k][j]);
      os << '\n';
    }
  }
}

void write_path_csv(const std::string& path, const PathSegment& segment) {
  write_path_csv(path, std::vector<PathSegment>{segment});
}

void write_summary_csv(const std::string& path, const PathSummary& summary) {
  std::ofstream os = open_out(path);
  const Eigen::Index d = summary.mean.empty() ? 0 : summary.mean.front().size();
  os << "time";
  for (Eigen::Index j = 0; j < d; ++j)
    os << ",mean_x" << j + 1 << ",lower_x" << j + 1 << ",upper_x" << j + 1;
  os << '\n';
  for (std::size_t k = 0; k < summary.mean.size(); ++k) {
    os << format_double(summary.grid[k]);
    for (Eigen::Index j = 0; j < d; ++j)
      os << ',' << format_double(summary.mean[k][j]) << ',' << format_double(summary.lower[k][j])
         << ',' << format_double(summary.upper[k][j]);
    os << '\n';
  }
}

void ensure_directory(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw ConfigError("cannot create directory '" + dir + "': " + ec.message());
}

std::vector<std::string> split_terms(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  int depth = 0;
  for (char c : text) {
    if (c == '(') ++depth;
    if (c == ')') --depth;
    if (depth == 0 && std::isspace(static_cast<unsigned char>(c))) {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

std::function<double(double)> parse_prior(const std::string& text) {
  const std::string t = trim(text);
  if (t == "flat") return [](double) { return 0.0; };
  const auto open = t.find('(');
  if (open == std::string::npos || t.back() != ')')
    throw ConfigError("prior '" + t + "': expected name(a,b) or flat");
  const std::string name = t.substr(0, open);
  const Vec p = parse_vector(t.substr(open + 1, t.size() - open - 2), "prior '" + t + "'");
  if (p.size() != 2) throw ConfigError("prior '" + t + "': expected two parameters");
  const double a = p[0], b = p[1];
  constexpr double ninf = -std::numeric_limits<double>::infinity();
  const double log2pi = std::log(2.0 * std::numbers::pi);
  if (name == "normal") {
    if (!(b > 0)) throw ConfigError("prior '" + t + "': scale must be positive");
    return [=](double x) { return -0.5 * ((x - a) / b) * ((x - a) / b) - std::log(b) - 0.5 * log2pi; };
  }
  if (name == "lognormal") {
    if (!(b > 0)) throw ConfigError("prior '" + t + "': scale must be positive");
    return [=](double x) {
      if (!(x > 0)) return ninf;
      const double z = (std::log(x) - a) / b;
      return -0.5 * z * z - std::log(x * b) - 0.5 * log2pi;
    };
  }
  if (name == "gamma") {
    if (!(a > 0 && b > 0)) throw ConfigError("prior '" + t + "': parameters must be positive");
    return [=](double x) {
      if (!(x > 0)) return ninf;
      return a * std::log(b) - std::lgamma(a) + (a - 1.0) * std::log(x) - b * x;
    };
  }
  if (name == "invgamma") {
    if (!(a > 0 && b > 0)) throw ConfigError("prior '" + t + "': parameters must be positive");
    return [=](double x) {
      if (!(x > 0)) return ninf;
      return a * std::log(b) - std::lgamma(a) - (a + 1.0) * std::log(x) - b / x;
    };
  }
  if (name == "uniform") {
    if (!(b > a)) throw ConfigError("prior '" + t + "': need a < b");
    return [=](double x) { return (x >= a && x <= b) ? -std::log(b - a) : ninf; };
  }
  throw ConfigError("unknown prior '" + name + "'");
}

}  // namespace fbridge::io
