#pragma once

// CSV artifacts. Every number goes through format_double (shortest round trip), so the files are
// locale independent and parse back bit-exactly.

#include <cstddef>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "miocp/alternating.hpp"
#include "miocp/conditions.hpp"
#include "miocp/io/config.hpp"

namespace miocp::io {

inline constexpr std::string_view kHistoryHeader = "iter,stage,entry_row,entry_col,sigma_rho_value";

struct HistoryRow {
  std::size_t iter = 0;
  std::size_t stage = 0;
  Eigen::Index row = 0;
  Eigen::Index col = 0;
  double value = 0.0;

  bool operator==(const HistoryRow&) const = default;
};

class CsvWriter {
 public:
  explicit CsvWriter(std::ostream& out) : out_(out) {}

  CsvWriter& field(std::string_view s) {
    sep();
    out_ << s;
    return *this;
  }
  CsvWriter& field(const char* s) { return field(std::string_view(s)); }
  CsvWriter& field(const std::string& s) { return field(std::string_view(s)); }
  CsvWriter& field(double v) { return field(format_double(v)); }
  CsvWriter& field(std::size_t v) { return field(std::to_string(v)); }
  CsvWriter& field(Eigen::Index v) { return field(std::to_string(v)); }
  CsvWriter& field(bool v) { return field(v ? "true" : "false"); }
  void end_row() {
    out_ << '\n';
    first_ = true;
  }

 private:
  void sep() {
    if (!first_) out_ << ',';
    first_ = false;
  }
  std::ostream& out_;
  bool first_ = true;
};

template <int N, int M>
void write_history_csv(std::ostream& out, const RunHistory<N, M>& hist) {
  out << kHistoryHeader << '\n';
  CsvWriter w(out);
  for (const auto& rec : hist.records) {
    for (std::size_t k = 0; k < rec.prior_cov.size(); ++k) {
      const auto& S = rec.prior_cov[k];
      for (Eigen::Index i = 0; i < S.rows(); ++i)
        for (Eigen::Index j = 0; j < S.cols(); ++j) {
          w.field(rec.iteration).field(k).field(i).field(j).field(S(i, j));
          w.end_row();
        }
    }
  }
}

template <int N, int M>
void write_objectives_csv(std::ostream& out, const RunHistory<N, M>& hist) {
  out << "iter,objective,residual\n";
  CsvWriter w(out);
  for (const auto& rec : hist.records) {
    w.field(rec.iteration).field(rec.objective).field(rec.residual);
    w.end_row();
  }
}

namespace detail {

inline std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  while (true) {
    const auto comma = line.find(',', pos);
    out.push_back(line.substr(pos, comma == std::string_view::npos ? std::string_view::npos : comma - pos));
    if (comma == std::string_view::npos) break;
    pos = comma + 1;
  }
  return out;
}

inline std::size_t parse_index(std::string_view s, int line) {
  std::size_t v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw ConfigError("bad integer '" + std::string(s) + "' in history", line);
  }
  return v;
}

}  // namespace detail

inline std::vector<HistoryRow> parse_history_csv(std::string_view text) {
  std::vector<HistoryRow> rows;
  std::size_t pos = 0;
  int line_no = 0;
  bool header = true;
  while (pos < text.size()) {
    const auto nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() : nl + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (header) {
      if (line != kHistoryHeader) throw ConfigError("unexpected history header", line_no);
      header = false;
      continue;
    }
    if (line.empty()) continue;
    const auto f = detail::split_fields(line);
    if (f.size() != 5) throw ConfigError("history row needs 5 fields", line_no);
    HistoryRow r;
    r.iter = detail::parse_index(f[0], line_no);
    r.stage = detail::parse_index(f[1], line_no);
    r.row = static_cast<Eigen::Index>(detail::parse_index(f[2], line_no));
    r.col = static_cast<Eigen::Index>(detail::parse_index(f[3], line_no));
    const auto v = parse_double(f[4]);
    if (!v) throw ConfigError("bad value '" + std::string(f[4]) + "' in history", line_no);
    r.value = *v;
    rows.push_back(r);
  }
  if (header) throw ConfigError("empty history file");
  return rows;
}

/// One summary row per solve. Column set depends on (T, m) only.
inline std::string summary_header(std::size_t T, Eigen::Index m) {
  std::string h = "epsilon,status,iterations,converged,stop_reason,objective,residual,avg_policy_variance";
  for (const char* name : {"sigma_rho", "sigma_pi"})
    for (std::size_t k = 0; k < T; ++k)
      for (Eigen::Index i = 0; i < m; ++i)
        for (Eigen::Index j = 0; j < m; ++j)
          h += "," + std::string(name) + "_" + std::to_string(k) + "_" + std::to_string(i) + "_" + std::to_string(j);
  return h;
}

template <int N, int M>
std::string summary_row(double epsilon, const RunHistory<N, M>& hist) {
  std::ostringstream out;
  CsvWriter w(out);
  w.field(epsilon).field("ok").field(hist.iterations).field(hist.converged).field(to_string(hist.reason));
  w.field(hist.final_objective).field(hist.final_residual).field(avg_policy_variance(hist.final_policy).scalar);
  for (const auto& S : hist.final_prior.cov)
    for (Eigen::Index i = 0; i < S.rows(); ++i)
      for (Eigen::Index j = 0; j < S.cols(); ++j) w.field(S(i, j));
  for (const auto& S : hist.final_policy.cov)
    for (Eigen::Index i = 0; i < S.rows(); ++i)
      for (Eigen::Index j = 0; j < S.cols(); ++j) w.field(S(i, j));
  return out.str();
}

/// Row for a failed solve: status names the error, numeric columns empty.
inline std::string summary_failure_row(double epsilon, const std::string& status, std::size_t T, Eigen::Index m) {
  std::ostringstream out;
  CsvWriter w(out);
  w.field(epsilon).field(status);
  const std::size_t blanks = 6 + 2 * T * static_cast<std::size_t>(m * m);
  for (std::size_t i = 0; i < blanks; ++i) w.field(std::string_view{});
  return out.str();
}

template <int N, int M>
void write_conditions_csv(std::ostream& out, const ConditionReport<N, M>& rep, const EpsilonThresholds& th) {
  const Eigen::Index m = rep.stochastic.matrix.empty() ? 0 : rep.stochastic.matrix.front().rows();
  out << "epsilon,stage,stochastic_margin,deterministic_margin,eps_stochastic_max,eps_deterministic_min,"
         "stochastic_verdict,deterministic_guaranteed,a_invertible,b_full_column_rank";
  for (const char* name : {"m_check", "m_hat_zero"})
    for (Eigen::Index i = 0; i < m; ++i)
      for (Eigen::Index j = 0; j < m; ++j) out << ',' << name << '_' << i << '_' << j;
  out << '\n';
  CsvWriter w(out);
  for (std::size_t k = 0; k < rep.stochastic.margin.size(); ++k) {
    w.field(rep.epsilon).field(k).field(rep.stochastic.margin[k]).field(rep.deterministic.margin[k]);
    w.field(th.stochastic_max[k]).field(th.deterministic_min[k]);
    w.field(to_string(rep.stochastic_verdict)).field(rep.deterministic_guaranteed());
    w.field(rep.assumptions.a_invertible).field(rep.assumptions.b_full_column_rank);
    for (const auto* mats : {&rep.stochastic.matrix, &rep.deterministic.matrix}) {
      const auto& X = (*mats)[k];
      for (Eigen::Index i = 0; i < X.rows(); ++i)
        for (Eigen::Index j = 0; j < X.cols(); ++j) w.field(X(i, j));
    }
    w.end_row();
  }
}

inline void write_thresholds_csv(std::ostream& out, const EpsilonThresholds& th) {
  out << "stage,eps_stochastic_max,eps_deterministic_min,stochastic_degenerate,verified\n";
  CsvWriter w(out);
  for (std::size_t k = 0; k < th.stochastic_max.size(); ++k) {
    w.field(k).field(th.stochastic_max[k]).field(th.deterministic_min[k]).field(th.stochastic_degenerate);
    w.field(th.verified);
    w.end_row();
  }
  w.field("all").field(th.eps_stochastic_max).field(th.eps_deterministic_min).field(th.stochastic_degenerate);
  w.field(th.verified);
  w.end_row();
}

}  // namespace miocp::io
