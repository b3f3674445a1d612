#pragma once

#include "fbridge/mcmc.hpp"
#include "fbridge/model.hpp"

#include <istream>
#include <map>
#include <set>
#include <string>

namespace fbridge::io {

// Flat `key = value` text. '#' starts a comment; blank lines are ignored.
class KeyValueConfig {
 public:
  static KeyValueConfig parse(std::istream& in, const std::string& origin = "<config>");
  static KeyValueConfig load(const std::string& path);

  bool has(const std::string& key) const { return values_.count(key) > 0; }
  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  const std::map<std::string, std::string>& values() const { return values_; }

  std::string get(const std::string& key) const;
  std::string get(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  long long get_int(const std::string& key, long long fallback) const;
  /// Whitespace or comma separated numbers.
  Vec get_vector(const std::string& key) const;
  /// Rows separated by ';'.
  Mat get_matrix(const std::string& key) const;

  /// Throws ConfigError naming the first key outside `known`.
  void require_known(const std::set<std::string>& known) const;

 private:
  std::string origin_;
  std::map<std::string, std::string> values_;
};

Vec parse_vector(const std::string& text, const std::string& what);
Mat parse_matrix(const std::string& text, const std::string& what);

/// %.17g
std::string format_double(double x);

/// Sidecar with per-time L and Sigma: obs.csv -> obs.json.
std::string sidecar_path(const std::string& csv_path);

/// CSV `time,v1..vm` (blank cells where an observation has fewer rows) plus
/// the JSON sidecar.
void write_observations(const std::string& csv_path, const ObservationScheme& scheme, int dim_state);
ObservationScheme read_observations(const std::string& csv_path, int* dim_state = nullptr);

/// `time,x1..xd` over the concatenated segments.
void write_path_csv(const std::string& path, const std::vector<PathSegment>& segments);
void write_path_csv(const std::string& path, const PathSegment& segment);

/// `time,mean_x1,lower_x1,upper_x1,...`
void write_summary_csv(const std::string& path, const PathSummary& summary);

void ensure_directory(const std::string& dir);

/// Parses one prior term: flat, normal(m,s), lognormal(m,s), gamma(shape,rate),
/// invgamma(shape,scale), uniform(a,b). Returns the log-density (up to a constant
/// for flat).
std::function<double(double)> parse_prior(const std::string& text);

/// Splits on whitespace outside parentheses.
std::vector<std::string> split_terms(const std::string& text);

}  // namespace fbridge::io
