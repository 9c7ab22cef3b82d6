#pragma once

// Alternating optimization over (policy, prior): repeat
//   policy <- optimal policy for the current prior,
//   prior  <- input marginal of that policy,
// starting from a strictly PD zero-mean prior.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <string>
#include <vector>

#include "miocp/fixed_point.hpp"
#include "miocp/problem.hpp"

namespace miocp {

struct RunOptions {
  std::size_t max_iters = 1000000;
  double residual_tol = 1e-14;
  std::size_t record_every = 1000;
  double objective_slack = 1e-10;  // relative to max(1, |J|)
};

enum class StopReason { ResidualTolerance, MaxIterations };

inline const char* to_string(StopReason r) {
  return r == StopReason::ResidualTolerance ? "residual_tol" : "max_iters";
}

template <int N = Dynamic, int M = Dynamic>
struct RunRecord {
  std::size_t iteration = 0;
  std::vector<typename Shapes<N, M>::InputSquare> prior_cov;
  double objective = 0.0;
  double residual = 0.0;  // max over stages of |Sigma_rho_k^+ - Sigma_rho_k|_F
};

template <int N = Dynamic, int M = Dynamic>
struct RunHistory {
  std::vector<RunRecord<N, M>> records;
  GaussianPrior<N, M> final_prior;
  GaussianPolicy<N, M> final_policy;
  double final_objective = 0.0;
  double final_residual = 0.0;
  std::size_t iterations = 0;  // prior updates applied
  bool converged = false;
  StopReason reason = StopReason::MaxIterations;
};

namespace detail {

template <int N, int M>
double max_stage_change(const GaussianPrior<N, M>& a, const GaussianPrior<N, M>& b) {
  double worst = 0.0;
  for (std::size_t k = 0; k < a.cov.size(); ++k) worst = std::max(worst, (a.cov[k] - b.cov[k]).norm());
  return worst;
}

[[noreturn]] [[gnu::cold]] [[gnu::noinline]] inline void throw_diverged(double before, double after,
                                                                       std::size_t iteration) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "objective increased from %.17g to %.17g at iteration %zu", before, after,
                iteration);
  throw Error(ErrorCode::Diverged, buf);
}

template <int N, int M>
void require_run_input(const ProblemSpec<N, M>& spec, const GaussianPrior<N, M>& init, const RunOptions& opts) {
  if (opts.max_iters < 1) throw Error(ErrorCode::InvalidArgument, "max_iters must be at least 1", "max_iters");
  if (opts.record_every < 1) throw Error(ErrorCode::InvalidArgument, "record_every must be at least 1", "record_every");
  if (!(opts.residual_tol >= 0.0)) throw Error(ErrorCode::InvalidArgument, "residual_tol < 0", "residual_tol");
  if (!(opts.objective_slack >= 0.0)) throw Error(ErrorCode::InvalidArgument, "objective_slack < 0", "objective_slack");
  check_prior(spec, init);
  if (!init.zero_mean()) throw Error(ErrorCode::InvalidArgument, "initial prior must have zero means", "sigma_rho");
  for (std::size_t k = 0; k < spec.horizon; ++k) {
    if (!(min_eig(init.cov[k]) > 0.0)) {
      throw Error(ErrorCode::NonPositiveDefinite, "initial prior covariance must be PD", "sigma_rho", k);
    }
  }
}

template <int N, int M>
RunHistory<N, M> finish(RunHistory<N, M>& hist, std::size_t i, double objective, double residual,
                        const RunOptions& opts) {
  hist.converged = residual <= opts.residual_tol;
  hist.reason = hist.converged ? StopReason::ResidualTolerance : StopReason::MaxIterations;
  hist.iterations = i;
  hist.final_objective = objective;
  hist.final_residual = residual;
  return std::move(hist);
}

inline void require_positive_scalar(double v, const char* what, std::size_t k) {
  if (!(v > 0.0 && std::isfinite(v))) throw_ill_conditioned(-1.0, what, k);
}

// The general loop on plain doubles for 1x1 problems, where Eigen's per-call
// overhead costs several times the arithmetic. Same formulas, same checks.
template <int N, int M>
RunHistory<N, M> run_scalar(const ProblemSpec<N, M>& spec, const GaussianPrior<N, M>& init, const RunOptions& opts) {
  using InputSquare = typename Shapes<N, M>::InputSquare;
  const std::size_t T = spec.horizon;
  const double eps = spec.epsilon;
  std::vector<double> A(T), B(T), R(T), W(T), prior(T), next(T), cost_to_go(T + 1), hess(T), roots(T);
  for (std::size_t k = 0; k < T; ++k) {
    A[k] = spec.dynamics[k](0, 0);
    B[k] = spec.input_map[k](0, 0);
    R[k] = spec.input_cost[k](0, 0);
    W[k] = spec.process_noise[k](0, 0);
    prior[k] = init.cov[k](0, 0);
  }
  const double x_init = spec.initial_cov(0, 0);
  cost_to_go[T] = spec.terminal_cost(0, 0);
  auto as_cov = [&](const std::vector<double>& v) {
    std::vector<InputSquare> out(v.size());
    for (std::size_t k = 0; k < v.size(); ++k) out[k] = InputSquare::Constant(v[k]);
    return out;
  };

  RunHistory<N, M> hist;
  double previous = 0.0;
  for (std::size_t i = 0;; ++i) {
    for (std::size_t k = T; k-- > 0;) {
      const double pi = cost_to_go[k + 1];
      hess[k] = R[k] + B[k] * pi * B[k];
      require_positive_scalar(hess[k], "R + B'PiB", k);
      const double S = roots[k] = checked_sqrt(prior[k], kRelativeEigTol * std::abs(prior[k]));
      const double root = checked_sqrt(pi, kRelativeEigTol * (1.0 + std::abs(pi)));
      const double G = root * B[k] * S;
      const double inner = eps + S * R[k] * S;
      require_positive_scalar(inner, "eps I + S R S", k);
      const double bracket = 1.0 + G * (G / inner);
      require_positive_scalar(bracket, "Woodbury bracket", k);
      const double rootA = root * A[k];
      cost_to_go[k] = rootA * (rootA / bracket);
    }

    double objective = cost_to_go[0] * x_init;
    double x = x_init, residual = 0.0;
    for (std::size_t k = 0; k < T; ++k) {
      const double S = roots[k];
      const double middle = 1.0 + S * (hess[k] / eps) * S;
      require_positive_scalar(middle, "I + S C S", k);
      const double cov = S * (S / middle);
      const double gain = -(cov * B[k] * cost_to_go[k + 1] * A[k]) / eps;
      objective += eps * std::log(middle) + cost_to_go[k + 1] * W[k];
      next[k] = cov + gain * x * gain;
      residual = std::max(residual, std::abs(next[k] - prior[k]));
      const double closed = A[k] + B[k] * gain;
      x = closed * x * closed + B[k] * cov * B[k] + W[k];
    }
    objective *= 0.5;
    if (i > 0 && objective > previous + opts.objective_slack * std::max(1.0, std::abs(previous))) {
      throw_diverged(previous, objective, i);
    }
    previous = objective;

    const bool done = residual <= opts.residual_tol || i == opts.max_iters;
    if (i % opts.record_every == 0 || done) hist.records.push_back({i, as_cov(prior), objective, residual});
    if (done) {
      hist.final_prior.cov = as_cov(prior);
      hist.final_prior.mean.assign(T, Shapes<N, M>::InputVector::Zero(1));
      hist.final_policy = policy_from_prior(spec, hist.final_prior).policy;
      return finish(hist, i, objective, residual, opts);
    }
    std::swap(prior, next);
  }
}

}  // namespace detail

/// Runs until the largest per-stage prior update is <= residual_tol or
/// max_iters updates have been applied. The final prior is the last iterate
/// (its own update norm is final_residual) and the final policy is optimal for it.
template <int N, int M>
RunHistory<N, M> run(const ProblemSpec<N, M>& spec, const GaussianPrior<N, M>& init, const RunOptions& opts = {}) {
  validate(spec);
  detail::require_run_input(spec, init, opts);
  if constexpr (N == 1 && M == 1) return detail::run_scalar(spec, init, opts);

  RunHistory<N, M> hist;
  GaussianPrior<N, M> prior = init;
  GaussianPrior<N, M> next;
  PolicyStep<N, M> step;
  StateMoments<N, M> moments;
  double previous = 0.0;
  for (std::size_t i = 0;; ++i) {
    policy_from_prior(spec, prior, step);
    const double objective = detail::objective_from_step(spec, step);
    if (i > 0 && objective > previous + opts.objective_slack * std::max(1.0, std::abs(previous))) {
      detail::throw_diverged(previous, objective, i);
    }
    previous = objective;

    propagate_moments(spec, step.policy, moments);
    prior_from_policy(spec, step.policy, moments, next);
    const double residual = detail::max_stage_change(next, prior);
    const bool done = residual <= opts.residual_tol || i == opts.max_iters;

    if (i % opts.record_every == 0 || done) {
      hist.records.push_back({i, prior.cov, objective, residual});
    }
    if (done) {
      hist.final_policy = std::move(step.policy);
      hist.final_prior = std::move(prior);
      return detail::finish(hist, i, objective, residual, opts);
    }
    std::swap(prior, next);
  }
}

/// Per-stage |Sigma_rho L (E Sigma_x E' - Sigma_rho - Sigma_Q) L Sigma_rho|_F; zero exactly at fixed points.
template <int N, int M>
std::vector<double> fixed_point_residual(const ProblemSpec<N, M>& spec, const GaussianPrior<N, M>& prior) {
  const auto grad = gradient_reduced(spec, prior);
  const auto ric = solve_riccati(spec, prior);
  std::vector<double> out(spec.horizon);
  for (std::size_t k = 0; k < spec.horizon; ++k) {
    const auto& S = prior.cov[k];
    const auto& L = grad.total_precision[k];
    const auto& E = grad.feedback_map[k];
    const auto inner = (E * grad.state_cov[k] * E.transpose() - S - ric.q_covariance[k]).eval();
    out[k] = (S * L * inner * L * S).norm();
  }
  return out;
}

template <int N = Dynamic, int M = Dynamic>
struct PolicyVariance {
  typename Shapes<N, M>::InputSquare mean_cov;  // (1/T) sum_k Sigma_pi_k
  double scalar = 0.0;                          // trace(mean_cov) / m
};

template <int N, int M>
PolicyVariance<N, M> avg_policy_variance(const GaussianPolicy<N, M>& policy) {
  if (policy.cov.empty()) throw Error(ErrorCode::InvalidArgument, "empty policy");
  PolicyVariance<N, M> out;
  out.mean_cov = policy.cov.front();
  for (std::size_t k = 1; k < policy.cov.size(); ++k) out.mean_cov += policy.cov[k];
  out.mean_cov /= static_cast<double>(policy.cov.size());
  out.scalar = out.mean_cov.trace() / static_cast<double>(out.mean_cov.rows());
  return out;
}

}  // namespace miocp
