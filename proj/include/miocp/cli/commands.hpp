#pragma once

// The four harness commands behind the `miocp` executable. Argument parsing
// lives in tools/; everything here takes an already-parsed CommandOptions and
// returns a process exit code.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "miocp/alternating.hpp"
#include "miocp/conditions.hpp"
#include "miocp/io/config.hpp"
#include "miocp/io/csv.hpp"
#include "miocp/simulate.hpp"

namespace miocp::cli {

enum ExitCode : int { kOk = 0, kConfigError = 2, kValidationError = 3, kNumericalError = 4 };

struct CommandOptions {
  std::string config_path;
  std::string out_dir = ".";
  std::vector<double> epsilons;  // sweep
  std::size_t n_traj = 10000;    // simulate
  std::optional<std::uint64_t> seed;
  std::ostream* out = &std::cout;
  std::ostream* err = &std::cerr;
};

/// Parses "1e-3,0.1,10". Throws ConfigError on a malformed entry.
inline std::vector<double> parse_epsilon_list(std::string_view text) {
  std::vector<double> out;
  std::size_t pos = 0;
  while (pos <= text.size() && !text.empty()) {
    const auto comma = text.find(',', pos);
    const auto tok = io::detail::trim(text.substr(pos, comma == std::string_view::npos ? std::string_view::npos
                                                                                        : comma - pos));
    const auto v = io::parse_double(tok);
    if (!v) throw io::ConfigError("bad epsilon '" + std::string(tok) + "'");
    out.push_back(*v);
    if (comma == std::string_view::npos) break;
    pos = comma + 1;
  }
  return out;
}

/// `count` log-spaced values from lo to hi inclusive.
inline std::vector<double> log_grid(double lo, double hi, std::size_t count) {
  if (!(lo > 0.0) || !(hi >= lo) || count < 1) throw io::ConfigError("log grid needs 0 < lo <= hi and count >= 1");
  std::vector<double> out;
  if (count == 1) return {lo};
  const double a = std::log10(lo), b = std::log10(hi);
  for (std::size_t i = 0; i < count; ++i) {
    out.push_back(std::pow(10.0, a + (b - a) * static_cast<double>(i) / static_cast<double>(count - 1)));
  }
  out.front() = lo;
  out.back() = hi;
  return out;
}

/// Calls fn with the problem cast to a fixed-size instantiation when one
/// matches, otherwise with the dynamic one.
template <typename Fn>
decltype(auto) dispatch(const ProblemSpec<>& spec, Fn&& fn) {
  const auto n = spec.n(), m = spec.m();
  if (n == 1 && m == 1) return fn(cast_spec<1, 1>(spec));
  if (n == 2 && m == 1) return fn(cast_spec<2, 1>(spec));
  if (n == 2 && m == 2) return fn(cast_spec<2, 2>(spec));
  return fn(spec);
}

namespace detail {

inline std::ofstream open_output(const std::string& dir, const std::string& name) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  const auto path = std::filesystem::path(dir) / name;
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw io::ConfigError("cannot write '" + path.string() + "'");
  return f;
}

inline int exit_code_for(const Error& e) { return e.is_validation() ? kValidationError : kNumericalError; }

inline std::size_t sweep_threads(std::size_t jobs) {
  std::size_t cap = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("MIOCP_THREADS")) {
    const auto v = io::detail::parse_count(io::detail::trim(env), 0, "MIOCP_THREADS");
    if (v >= 1) cap = static_cast<std::size_t>(v);
  }
  return std::max<std::size_t>(1, std::min(cap, jobs));
}

struct Loaded {
  io::Config cfg;
  ProblemSpec<> spec;
  GaussianPrior<> init;
};

inline Loaded load(const CommandOptions& opt) {
  Loaded l;
  l.cfg = io::load_config(opt.config_path);
  l.spec = io::to_spec(l.cfg);
  l.init = io::initial_prior(l.cfg, l.spec);
  return l;
}

template <int N, int M>
RunHistory<N, M> solve_fixed(const ProblemSpec<N, M>& spec, const GaussianPrior<>& init, const RunOptions& opts) {
  return run(spec, cast_prior<N, M>(init), opts);
}

template <int N, int M>
void print_condition_table(std::ostream& out, const ConditionReport<N, M>& rep, const EpsilonThresholds& th) {
  out << "epsilon = " << io::format_double(rep.epsilon) << "\n";
  out << std::left << std::setw(7) << "stage" << std::right << std::setw(16) << "min_eig(Mcheck)" << std::setw(18)
      << "max_eig(Mhatzero)" << std::setw(16) << "eps_stoch_max" << std::setw(16) << "eps_det_min" << "\n";
  for (std::size_t k = 0; k < rep.stochastic.margin.size(); ++k) {
    out << std::left << std::setw(7) << k << std::right << std::setprecision(6) << std::setw(16)
        << rep.stochastic.margin[k] << std::setw(18) << rep.deterministic.margin[k] << std::setw(16)
        << th.stochastic_max[k] << std::setw(16) << th.deterministic_min[k] << "\n";
  }
  out << "stochastic_guaranteed:    " << to_string(rep.stochastic_verdict) << " (overall eps_stochastic_max "
      << th.eps_stochastic_max << ")\n";
  out << "deterministic_guaranteed: " << (rep.deterministic_guaranteed() ? "true" : "false")
      << " (overall eps_deterministic_min " << th.eps_deterministic_min << ")\n";
  out << "A invertible: " << (rep.assumptions.a_invertible ? "yes" : "no")
      << ", B full column rank: " << (rep.assumptions.b_full_column_rank ? "yes" : "no") << "\n";
}

template <int N, int M>
void write_conditions(const std::string& dir, const ProblemSpec<N, M>& spec) {
  const auto rep = check_conditions(spec);
  const auto th = epsilon_thresholds(spec);
  auto f = open_output(dir, "conditions.csv");
  io::write_conditions_csv(f, rep, th);
}

}  // namespace detail

inline int cmd_solve(const CommandOptions& opt) {
  const auto l = detail::load(opt);
  validate(l.spec);
  return dispatch(l.spec, [&](const auto& spec) {
    const auto hist = detail::solve_fixed(spec, l.init, l.cfg.run);
    {
      auto f = detail::open_output(opt.out_dir, "history.csv");
      io::write_history_csv(f, hist);
    }
    {
      auto f = detail::open_output(opt.out_dir, "objectives.csv");
      io::write_objectives_csv(f, hist);
    }
    {
      auto f = detail::open_output(opt.out_dir, "summary.csv");
      f << io::summary_header(spec.horizon, spec.m()) << '\n' << io::summary_row(spec.epsilon, hist) << '\n';
    }
    detail::write_conditions(opt.out_dir, spec);
    *opt.out << "iterations " << hist.iterations << " (" << to_string(hist.reason) << "), objective "
             << io::format_double17(hist.final_objective) << ", residual " << io::format_double17(hist.final_residual)
             << ", avg_policy_variance " << io::format_double17(avg_policy_variance(hist.final_policy).scalar)
             << "\n";
    return static_cast<int>(kOk);
  });
}

inline int cmd_sweep(const CommandOptions& opt) {
  if (opt.epsilons.empty()) throw io::ConfigError("sweep needs at least one epsilon");
  const auto l = detail::load(opt);
  validate(l.spec);
  std::vector<double> eps = opt.epsilons;
  std::stable_sort(eps.begin(), eps.end());

  std::vector<std::string> rows(eps.size());
  std::vector<int> codes(eps.size(), kOk);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < eps.size(); i = next++) {
      try {
        rows[i] = dispatch(l.spec.with_epsilon(eps[i]), [&](const auto& spec) {
          return io::summary_row(eps[i], detail::solve_fixed(spec, l.init, l.cfg.run));
        });
      } catch (const Error& e) {
        codes[i] = detail::exit_code_for(e);
        rows[i] = io::summary_failure_row(eps[i], to_string(e.code()), l.spec.horizon, l.spec.m());
      }
    }
  };
  const std::size_t n_threads = detail::sweep_threads(eps.size());
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < n_threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();

  {
    auto f = detail::open_output(opt.out_dir, "summary.csv");
    f << io::summary_header(l.spec.horizon, l.spec.m()) << '\n';
    for (const auto& r : rows) f << r << '\n';
  }
  {
    auto f = detail::open_output(opt.out_dir, "thresholds.csv");
    io::write_thresholds_csv(f, dispatch(l.spec, [](const auto& spec) { return epsilon_thresholds(spec); }));
  }
  int worst = kOk;
  for (std::size_t i = 0; i < eps.size(); ++i) {
    if (codes[i] != kOk) *opt.err << "epsilon " << io::format_double(eps[i]) << ": failed (code " << codes[i] << ")\n";
    worst = std::max(worst, codes[i]);
  }
  *opt.out << eps.size() << " epsilon values written to " << opt.out_dir << "\n";
  return worst;
}

inline int cmd_check(const CommandOptions& opt) {
  const auto l = detail::load(opt);
  validate(l.spec);
  return dispatch(l.spec, [&](const auto& spec) {
    const auto rep = check_conditions(spec);
    const auto th = epsilon_thresholds(spec);
    detail::print_condition_table(*opt.out, rep, th);
    {
      auto f = detail::open_output(opt.out_dir, "conditions.csv");
      io::write_conditions_csv(f, rep, th);
    }
    {
      auto f = detail::open_output(opt.out_dir, "thresholds.csv");
      io::write_thresholds_csv(f, th);
    }
    return static_cast<int>(kOk);
  });
}

inline int cmd_simulate(const CommandOptions& opt) {
  if (opt.n_traj < 1) throw Error(ErrorCode::InvalidArgument, "n_traj must be at least 1", "n_traj");
  const auto l = detail::load(opt);
  validate(l.spec);
  const std::uint64_t seed = opt.seed.value_or(l.cfg.seed);
  return dispatch(l.spec, [&](const auto& spec) {
    const auto hist = detail::solve_fixed(spec, l.init, l.cfg.run);
    const auto mc = rollout(spec, hist.final_policy, hist.final_prior, seed, opt.n_traj);
    const double gap = (mc.mean_cost - hist.final_objective) / mc.std_error;
    auto f = detail::open_output(opt.out_dir, "simulate.csv");
    f << "epsilon,n_traj,seed,iterations,empirical_objective,std_error,analytic_objective,gap_in_std_errors\n";
    io::CsvWriter w(f);
    w.field(spec.epsilon).field(mc.n_traj).field(std::to_string(seed)).field(hist.iterations);
    w.field(mc.mean_cost).field(mc.std_error).field(hist.final_objective).field(gap);
    w.end_row();
    *opt.out << "empirical " << io::format_double17(mc.mean_cost) << " +- " << io::format_double17(mc.std_error)
             << ", analytic " << io::format_double17(hist.final_objective) << "\n";
    return static_cast<int>(kOk);
  });
}

/// Runs `command` and maps failures to exit codes: 2 config/usage, 3 validation, 4 numerical.
inline int run_command(const std::string& command, const CommandOptions& opt) {
  try {
    if (command == "solve") return cmd_solve(opt);
    if (command == "sweep") return cmd_sweep(opt);
    if (command == "check") return cmd_check(opt);
    if (command == "simulate") return cmd_simulate(opt);
    *opt.err << "unknown command '" << command << "'\n";
    return kConfigError;
  } catch (const io::ConfigError& e) {
    *opt.err << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const Error& e) {
    *opt.err << (e.is_validation() ? "validation error: " : "numerical failure: ") << e.what() << "\n";
    return detail::exit_code_for(e);
  } catch (const std::exception& e) {
    *opt.err << "numerical failure: " << e.what() << "\n";
    return kNumericalError;
  }
}

}  // namespace miocp::cli
