#pragma once

// Plain-text problem configuration.
//
//   # comment
//   [problem]
//   T = 5
//   epsilon = 10
//   n = 2
//   m = 1
//   A = 0.9 0.2 0.1 1.1        row-major; rows*cols values broadcast to every
//   B = 0 0.2                  stage, or T*rows*cols values stage after stage
//   R = 1
//   F = 10 0 0 10              single matrix only
//   sigma_w = 1e-3 0 0 1e-3
//   sigma_x_ini = 7 3 3 5      single matrix only
//   [init]
//   sigma_rho = 1              optional, default identity
//   [run]
//   max_iters = 1000000
//   residual_tol = 1e-14
//   record_every = 1000
//   objective_slack = 1e-10
//   seed = 0
//
// Values may be separated by spaces and/or commas. Unknown sections or keys,
// duplicates and malformed numbers are ConfigError.

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "miocp/alternating.hpp"
#include "miocp/problem.hpp"

namespace miocp::io {

/// Malformed or unreadable configuration (as opposed to a well-formed but invalid problem).
class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& msg, int line = 0)
      : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " + msg : msg), line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

struct Config {
  std::size_t horizon = 0;
  double epsilon = 0.0;
  Eigen::Index n = 0;
  Eigen::Index m = 0;
  // raw row-major lists, either one matrix or one per stage
  std::vector<double> A, B, R, F, sigma_w, sigma_x_ini;
  std::optional<std::vector<double>> sigma_rho;
  RunOptions run;
  std::uint64_t seed = 0;
  // [run] keys present in the source, so serialization reproduces them
  std::vector<std::string> run_keys;
};

/// Shortest text that parses back to exactly `v`.
inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

/// 17 significant digits, locale independent.
inline std::string format_double17(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, 17);
  return std::string(buf, res.ptr);
}

/// Strict full-token parse; accepts the forms to_chars produces plus a leading '+'.
inline std::optional<double> parse_double(std::string_view tok) {
  if (!tok.empty() && tok.front() == '+') tok.remove_prefix(1);
  if (tok.empty()) return std::nullopt;
  double v = 0.0;
  const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (res.ec != std::errc() || res.ptr != tok.data() + tok.size()) return std::nullopt;
  return v;
}

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

inline std::vector<double> parse_list(std::string_view text, int line, const std::string& key) {
  std::vector<double> out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    while (pos < text.size() && (text[pos] == ' ' || text[pos] == '\t' || text[pos] == ',')) ++pos;
    if (pos >= text.size()) break;
    std::size_t end = pos;
    while (end < text.size() && text[end] != ' ' && text[end] != '\t' && text[end] != ',') ++end;
    const auto tok = text.substr(pos, end - pos);
    const auto v = parse_double(tok);
    if (!v) throw ConfigError("bad number '" + std::string(tok) + "' for " + key, line);
    out.push_back(*v);
    pos = end;
  }
  if (out.empty()) throw ConfigError("empty value for " + key, line);
  return out;
}

inline double parse_scalar(std::string_view text, int line, const std::string& key) {
  const auto values = parse_list(text, line, key);
  if (values.size() != 1) throw ConfigError(key + " expects a single number", line);
  return values.front();
}

inline std::uint64_t parse_count(std::string_view text, int line, const std::string& key) {
  std::uint64_t v = 0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
    throw ConfigError(key + " expects a non-negative integer, got '" + std::string(text) + "'", line);
  }
  return v;
}

inline const std::map<std::string, std::vector<std::string>>& known_keys() {
  static const std::map<std::string, std::vector<std::string>> keys = {
      {"problem", {"T", "epsilon", "n", "m", "A", "B", "R", "F", "sigma_w", "sigma_x_ini"}},
      {"init", {"sigma_rho"}},
      {"run", {"max_iters", "residual_tol", "record_every", "objective_slack", "seed"}},
  };
  return keys;
}

inline std::string join(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ' ';
    out += format_double(v[i]);
  }
  return out;
}

template <typename Mat>
std::vector<Mat> unpack(const std::vector<double>& raw, Eigen::Index rows, Eigen::Index cols, std::size_t T,
                        const char* key, bool per_stage_allowed) {
  const std::size_t one = static_cast<std::size_t>(rows * cols);
  std::size_t count = 0;
  if (raw.size() == one) {
    count = 1;
  } else if (per_stage_allowed && raw.size() == one * T) {
    count = T;
  } else {
    throw ConfigError(std::string(key) + " has " + std::to_string(raw.size()) + " values, expected " +
                      std::to_string(one) + (per_stage_allowed ? " or " + std::to_string(one * T) : std::string()));
  }
  std::vector<Mat> out;
  for (std::size_t s = 0; s < count; ++s) {
    Mat X(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
      for (Eigen::Index j = 0; j < cols; ++j) X(i, j) = raw[s * one + static_cast<std::size_t>(i * cols + j)];
    out.push_back(std::move(X));
  }
  if (count == 1 && per_stage_allowed) out.assign(T, out.front());
  return out;
}

}  // namespace detail

inline Config parse_config(std::string_view text) {
  Config cfg;
  std::map<std::string, bool> seen;
  std::string section;
  int line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;

    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("malformed section header", line_no);
      section = std::string(detail::trim(line.substr(1, line.size() - 2)));
      if (!detail::known_keys().count(section)) throw ConfigError("unknown section [" + section + "]", line_no);
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ConfigError("expected key = value", line_no);
    const std::string key(detail::trim(line.substr(0, eq)));
    const auto value = detail::trim(line.substr(eq + 1));
    if (section.empty()) throw ConfigError("key '" + key + "' outside any section", line_no);
    const auto& allowed = detail::known_keys().at(section);
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw ConfigError("unknown key '" + key + "' in [" + section + "]", line_no);
    }
    const std::string full = section + "." + key;
    if (seen[full]) throw ConfigError("duplicate key '" + key + "'", line_no);
    seen[full] = true;

    if (section == "problem") {
      if (key == "T") cfg.horizon = detail::parse_count(value, line_no, key);
      else if (key == "epsilon") cfg.epsilon = detail::parse_scalar(value, line_no, key);
      else if (key == "n") cfg.n = static_cast<Eigen::Index>(detail::parse_count(value, line_no, key));
      else if (key == "m") cfg.m = static_cast<Eigen::Index>(detail::parse_count(value, line_no, key));
      else if (key == "A") cfg.A = detail::parse_list(value, line_no, key);
      else if (key == "B") cfg.B = detail::parse_list(value, line_no, key);
      else if (key == "R") cfg.R = detail::parse_list(value, line_no, key);
      else if (key == "F") cfg.F = detail::parse_list(value, line_no, key);
      else if (key == "sigma_w") cfg.sigma_w = detail::parse_list(value, line_no, key);
      else if (key == "sigma_x_ini") cfg.sigma_x_ini = detail::parse_list(value, line_no, key);
    } else if (section == "init") {
      cfg.sigma_rho = detail::parse_list(value, line_no, key);
    } else {
      cfg.run_keys.push_back(key);
      if (key == "max_iters") cfg.run.max_iters = detail::parse_count(value, line_no, key);
      else if (key == "residual_tol") cfg.run.residual_tol = detail::parse_scalar(value, line_no, key);
      else if (key == "record_every") cfg.run.record_every = detail::parse_count(value, line_no, key);
      else if (key == "objective_slack") cfg.run.objective_slack = detail::parse_scalar(value, line_no, key);
      else if (key == "seed") cfg.seed = detail::parse_count(value, line_no, key);
    }
  }
  for (const char* req : {"T", "epsilon", "n", "m", "A", "B", "R", "F", "sigma_w", "sigma_x_ini"}) {
    if (!seen[std::string("problem.") + req]) throw ConfigError(std::string("missing [problem] key '") + req + "'");
  }
  return cfg;
}

inline Config load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

/// Canonical text form: fixed key order, shortest round-trip numbers, no comments.
inline std::string serialize_config(const Config& cfg) {
  std::ostringstream out;
  out << "[problem]\n";
  out << "T = " << cfg.horizon << "\n";
  out << "epsilon = " << format_double(cfg.epsilon) << "\n";
  out << "n = " << cfg.n << "\n";
  out << "m = " << cfg.m << "\n";
  out << "A = " << detail::join(cfg.A) << "\n";
  out << "B = " << detail::join(cfg.B) << "\n";
  out << "R = " << detail::join(cfg.R) << "\n";
  out << "F = " << detail::join(cfg.F) << "\n";
  out << "sigma_w = " << detail::join(cfg.sigma_w) << "\n";
  out << "sigma_x_ini = " << detail::join(cfg.sigma_x_ini) << "\n";
  if (cfg.sigma_rho) out << "\n[init]\nsigma_rho = " << detail::join(*cfg.sigma_rho) << "\n";
  if (!cfg.run_keys.empty()) {
    out << "\n[run]\n";
    const auto& order = detail::known_keys().at("run");
    for (const auto& key : order) {
      if (std::find(cfg.run_keys.begin(), cfg.run_keys.end(), key) == cfg.run_keys.end()) continue;
      out << key << " = ";
      if (key == "max_iters") out << cfg.run.max_iters;
      else if (key == "residual_tol") out << format_double(cfg.run.residual_tol);
      else if (key == "record_every") out << cfg.run.record_every;
      else if (key == "objective_slack") out << format_double(cfg.run.objective_slack);
      else if (key == "seed") out << cfg.seed;
      out << "\n";
    }
  }
  return out.str();
}

/// Builds the (dynamic-size) problem. Shape problems in the lists are
/// ConfigError; definiteness and the like are left to validate().
inline ProblemSpec<> to_spec(const Config& cfg) {
  if (cfg.horizon < 1) throw ConfigError("T must be at least 1");
  if (cfg.n < 1 || cfg.m < 1) throw ConfigError("n and m must be positive");
  using Mat = Eigen::MatrixXd;
  const auto T = cfg.horizon;
  ProblemSpec<> spec;
  spec.horizon = T;
  spec.epsilon = cfg.epsilon;
  spec.dynamics = detail::unpack<Mat>(cfg.A, cfg.n, cfg.n, T, "A", true);
  spec.input_map = detail::unpack<Mat>(cfg.B, cfg.n, cfg.m, T, "B", true);
  spec.input_cost = detail::unpack<Mat>(cfg.R, cfg.m, cfg.m, T, "R", true);
  spec.terminal_cost = detail::unpack<Mat>(cfg.F, cfg.n, cfg.n, T, "F", false).front();
  spec.process_noise = detail::unpack<Mat>(cfg.sigma_w, cfg.n, cfg.n, T, "sigma_w", true);
  spec.initial_cov = detail::unpack<Mat>(cfg.sigma_x_ini, cfg.n, cfg.n, T, "sigma_x_ini", false).front();
  return spec;
}

/// [init] prior, or the identity default.
inline GaussianPrior<> initial_prior(const Config& cfg, const ProblemSpec<>& spec) {
  if (!cfg.sigma_rho) return default_prior(spec);
  return zero_mean_prior<Dynamic, Dynamic>(
      detail::unpack<Eigen::MatrixXd>(*cfg.sigma_rho, cfg.m, cfg.m, cfg.horizon, "sigma_rho", true));
}

}  // namespace miocp::io
