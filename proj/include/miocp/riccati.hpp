#pragma once

// Prior-dependent backward Riccati recursion and its prior-free bounds.

#include <cstddef>
#include <vector>

#include "miocp/problem.hpp"
#include "miocp/psd_linalg.hpp"

namespace miocp {

template <int N = Dynamic, int M = Dynamic>
struct RiccatiSolution {
  using StateMatrix = typename Shapes<N, M>::StateMatrix;
  using InputSquare = typename Shapes<N, M>::InputSquare;

  std::vector<StateMatrix> cost_to_go;        // Pi_0..Pi_T, Pi_T = F
  std::vector<InputSquare> input_precision;   // C_k = (R_k + B_k' Pi_{k+1} B_k) / eps
  std::vector<InputSquare> q_covariance;      // Sigma_Q_k = C_k^{-1}
  std::vector<InputSquare> prior_sqrt;        // symmetric root of the prior covariance used
};

/// Prior-free sandwich: upper >= Pi_k >= lower >= 0 for every prior, and the
/// matching bounds on Sigma_Q_k.
template <int N = Dynamic, int M = Dynamic>
struct RiccatiBounds {
  using StateMatrix = typename Shapes<N, M>::StateMatrix;
  using InputSquare = typename Shapes<N, M>::InputSquare;

  std::vector<StateMatrix> cost_to_go_upper;   // open-loop A' ... F ... A
  std::vector<StateMatrix> cost_to_go_lower;   // standard LQR Riccati solution
  std::vector<InputSquare> q_covariance_upper; // eps (R + B' lower B)^{-1}
  std::vector<InputSquare> q_covariance_lower; // eps (R + B' upper B)^{-1}
};

namespace detail {

// Stage quantities shared by both recursion forms.
template <int N, int M>
void fill_stage_precision(const ProblemSpec<N, M>& spec, std::size_t k,
                          const typename Shapes<N, M>::StateMatrix& next, RiccatiSolution<N, M>& out) {
  const auto& B = spec.input_map[k];
  const typename Shapes<N, M>::InputSquare hess = symmetrize(spec.input_cost[k] + B.transpose() * next * B);
  out.input_precision[k] = hess / spec.epsilon;
  out.q_covariance[k] = spec.epsilon * pd_inverse(hess, "R + B'PiB", k);
}

// Sizes `out` for the horizon; reuses existing storage when already sized.
template <int N, int M>
void allocate_solution(const ProblemSpec<N, M>& spec, RiccatiSolution<N, M>& out) {
  out.cost_to_go.resize(spec.horizon + 1);
  out.input_precision.resize(spec.horizon);
  out.q_covariance.resize(spec.horizon);
  out.prior_sqrt.resize(spec.horizon);
  out.cost_to_go[spec.horizon] = spec.terminal_cost;
}

}  // namespace detail

/// Backward recursion from Pi_T = F in the Woodbury form
///   Pi_k = A' Pi^{1/2} [I + Pi^{1/2} B S (eps I + S R S)^{-1} S B' Pi^{1/2}]^{-1} Pi^{1/2} A,
/// S = Sigma_rho_k^{1/2}, Pi = Pi_{k+1}. The bracket is PD for any PSD prior covariance.
template <int N, int M>
void solve_riccati(const ProblemSpec<N, M>& spec, const GaussianPrior<N, M>& prior, RiccatiSolution<N, M>& out) {
  using StateMatrix = typename Shapes<N, M>::StateMatrix;
  using InputSquare = typename Shapes<N, M>::InputSquare;
  using InputMatrix = typename Shapes<N, M>::InputMatrix;

  const Eigen::Index n = spec.n();
  const Eigen::Index m = spec.m();
  detail::allocate_solution(spec, out);
  for (std::size_t k = spec.horizon; k-- > 0;) {
    const StateMatrix& next = out.cost_to_go[k + 1];
    const auto& A = spec.dynamics[k];
    const auto& B = spec.input_map[k];
    detail::fill_stage_precision(spec, k, next, out);

    const InputSquare S = psd_sqrt_scale_free(prior.cov[k]);
    out.prior_sqrt[k] = S;
    const StateMatrix root = psd_sqrt(next);
    const InputMatrix G = root * B * S;
    const InputSquare inner = symmetrize(spec.epsilon * InputSquare::Identity(m, m) + S * spec.input_cost[k] * S);
    const auto inner_llt = pd_factorize(inner, "eps I + S R S", k);
    const StateMatrix bracket =
        symmetrize(StateMatrix::Identity(n, n) + G * inner_llt.solve(G.transpose()));
    const auto bracket_llt = pd_factorize(bracket, "Woodbury bracket", k);
    const StateMatrix rootA = root * A;
    out.cost_to_go[k] = symmetrize(rootA.transpose() * bracket_llt.solve(rootA));
  }
}

template <int N, int M>
RiccatiSolution<N, M> solve_riccati(const ProblemSpec<N, M>& spec, const GaussianPrior<N, M>& prior) {
  RiccatiSolution<N, M> out;
  solve_riccati(spec, prior, out);
  return out;
}

/// Same recursion in the direct form
///   Pi_k = A' Pi A - (1/eps) A' Pi B S (I + S C S)^{-1} S B' Pi A.
/// Kept as an independent cross-check of solve_riccati.
template <int N, int M>
RiccatiSolution<N, M> solve_riccati_direct(const ProblemSpec<N, M>& spec, const GaussianPrior<N, M>& prior) {
  using StateMatrix = typename Shapes<N, M>::StateMatrix;
  using InputSquare = typename Shapes<N, M>::InputSquare;

  const Eigen::Index m = spec.m();
  RiccatiSolution<N, M> out;
  detail::allocate_solution(spec, out);
  for (std::size_t k = spec.horizon; k-- > 0;) {
    const StateMatrix& next = out.cost_to_go[k + 1];
    const auto& A = spec.dynamics[k];
    const auto& B = spec.input_map[k];
    detail::fill_stage_precision(spec, k, next, out);

    const InputSquare S = psd_sqrt_scale_free(prior.cov[k]);
    out.prior_sqrt[k] = S;
    const InputSquare middle = symmetrize(InputSquare::Identity(m, m) + S * out.input_precision[k] * S);
    const auto llt = pd_factorize(middle, "I + S C S", k);
    const typename Shapes<N, M>::GainMatrix SBtPA = S * B.transpose() * next * A;
    out.cost_to_go[k] =
        symmetrize(A.transpose() * next * A - SBtPA.transpose() * llt.solve(SBtPA) / spec.epsilon);
  }
  return out;
}

/// Prior-free bounds. Only the Sigma_Q bounds depend on epsilon (linearly).
template <int N, int M>
RiccatiBounds<N, M> riccati_bounds(const ProblemSpec<N, M>& spec) {
  using StateMatrix = typename Shapes<N, M>::StateMatrix;
  using InputSquare = typename Shapes<N, M>::InputSquare;

  const std::size_t T = spec.horizon;
  RiccatiBounds<N, M> out;
  out.cost_to_go_upper.resize(T + 1);
  out.cost_to_go_lower.resize(T + 1);
  out.q_covariance_upper.resize(T);
  out.q_covariance_lower.resize(T);
  out.cost_to_go_upper[T] = spec.terminal_cost;
  out.cost_to_go_lower[T] = spec.terminal_cost;
  for (std::size_t k = T; k-- > 0;) {
    const auto& A = spec.dynamics[k];
    const auto& B = spec.input_map[k];
    const auto& R = spec.input_cost[k];
    const StateMatrix& up = out.cost_to_go_upper[k + 1];
    const StateMatrix& lo = out.cost_to_go_lower[k + 1];

    out.cost_to_go_upper[k] = symmetrize(A.transpose() * up * A);

    const InputSquare hess_lo = symmetrize(R + B.transpose() * lo * B);
    const auto llt = pd_factorize(hess_lo, "R + B'Pi_lower B", k);
    const typename Shapes<N, M>::GainMatrix BtPA = B.transpose() * lo * A;
    out.cost_to_go_lower[k] = symmetrize(A.transpose() * lo * A - BtPA.transpose() * llt.solve(BtPA));

    out.q_covariance_upper[k] = spec.epsilon * pd_inverse(hess_lo, "R + B'Pi_lower B", k);
    const InputSquare hess_up = symmetrize(R + B.transpose() * up * B);
    out.q_covariance_lower[k] = spec.epsilon * pd_inverse(hess_up, "R + B'Pi_upper B", k);
  }
  return out;
}

}  // namespace miocp
