#pragma once

// Prior-free sufficient conditions on the temperature for stochastic
// (all optimal prior covariances PD) and deterministic (all zero) solutions.
// Both test matrices are affine in epsilon: G_k - epsilon * H_k.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include <Eigen/LU>

#include "miocp/problem.hpp"
#include "miocp/psd_linalg.hpp"
#include "miocp/riccati.hpp"

namespace miocp {

/// Per-stage pencil G_k - eps H_k with G_k PSD and H_k PD, both eps-independent.
template <int N = Dynamic, int M = Dynamic>
struct ConditionPencil {
  std::vector<typename Shapes<N, M>::InputSquare> fixed;   // G_k
  std::vector<typename Shapes<N, M>::InputSquare> slope;   // H_k

  typename Shapes<N, M>::InputSquare at(std::size_t k, double eps) const { return fixed[k] - eps * slope[k]; }
};

template <int N = Dynamic, int M = Dynamic>
struct ConditionCheck {
  std::vector<typename Shapes<N, M>::InputSquare> matrix;
  std::vector<double> margin;  // min_eig for the stochastic test, max_eig for the deterministic one
  bool holds = false;
};

enum class StochasticVerdict { Guaranteed, NotGuaranteed, AssumptionsUnmet };

inline const char* to_string(StochasticVerdict v) {
  switch (v) {
    case StochasticVerdict::Guaranteed: return "guaranteed";
    case StochasticVerdict::NotGuaranteed: return "not_guaranteed";
    case StochasticVerdict::AssumptionsUnmet: return "assumptions_unmet";
  }
  return "unknown";
}

struct AssumptionFlags {
  bool a_invertible = true;
  bool b_full_column_rank = true;
  bool hold() const { return a_invertible && b_full_column_rank; }
};

template <int N = Dynamic, int M = Dynamic>
struct ConditionReport {
  double epsilon = 0.0;
  ConditionCheck<N, M> stochastic;     // M_check_k, holds iff all PD
  ConditionCheck<N, M> deterministic;  // M_hat_zero_k, holds iff all ND
  AssumptionFlags assumptions;
  StochasticVerdict stochastic_verdict = StochasticVerdict::NotGuaranteed;

  bool stochastic_guaranteed() const { return stochastic_verdict == StochasticVerdict::Guaranteed; }
  bool deterministic_guaranteed() const { return deterministic.holds; }
};

struct EpsilonThresholds {
  std::vector<double> stochastic_max;     // per stage: M_check_k > 0 iff eps < value
  std::vector<double> deterministic_min;  // per stage: M_hat_zero_k < 0 iff eps > value
  double eps_stochastic_max = 0.0;        // min over stages
  double eps_deterministic_min = 0.0;     // max over stages
  bool stochastic_degenerate = false;     // some G_k singular, so no eps > 0 passes
  bool verified = false;                  // booleans re-checked at threshold * (1 -+ 1e-6)
};

/// Open-loop state covariance: Sigma_{k+1} = A_k Sigma_k A_k' + Sigma_w_k from Sigma_x_ini.
template <int N, int M>
std::vector<typename Shapes<N, M>::StateMatrix> sigma_x_zero(const ProblemSpec<N, M>& spec) {
  std::vector<typename Shapes<N, M>::StateMatrix> out(spec.horizon + 1);
  out[0] = spec.initial_cov;
  for (std::size_t k = 0; k < spec.horizon; ++k) {
    const auto& A = spec.dynamics[k];
    out[k + 1] = symmetrize(A * out[k] * A.transpose() + spec.process_noise[k]);
  }
  return out;
}

namespace detail {

// Sandwich (R + B' Pi_outer B)^{-1} B' Pi_inner A W A' Pi_inner B (R + B' Pi_outer B)^{-1}.
template <int N, int M>
typename Shapes<N, M>::InputSquare condition_leading(const ProblemSpec<N, M>& spec, std::size_t k,
                                                     const typename Shapes<N, M>::StateMatrix& pi_outer,
                                                     const typename Shapes<N, M>::StateMatrix& pi_inner,
                                                     const typename Shapes<N, M>::StateMatrix& W) {
  const auto& B = spec.input_map[k];
  const auto& A = spec.dynamics[k];
  const auto outer_inv = pd_inverse(symmetrize(spec.input_cost[k] + B.transpose() * pi_outer * B), "R + B'PiB", k);
  const typename Shapes<N, M>::GainMatrix side = outer_inv * B.transpose() * pi_inner * A;
  return symmetrize(side * W * side.transpose());
}

template <int N, int M>
ConditionCheck<N, M> evaluate_pencil(const ConditionPencil<N, M>& pencil, double eps, bool want_positive) {
  ConditionCheck<N, M> out;
  out.holds = true;
  for (std::size_t k = 0; k < pencil.fixed.size(); ++k) {
    auto mat = symmetrize(pencil.at(k, eps));
    const double margin = want_positive ? min_eig(mat) : max_eig(mat);
    out.holds = out.holds && (want_positive ? margin > 0.0 : margin < 0.0);
    out.matrix.push_back(std::move(mat));
    out.margin.push_back(margin);
  }
  return out;
}

}  // namespace detail

/// G_k = (R+B'Pi_hat B)^{-1} B' Pi_check A Sigma_w_{k-1} A' Pi_check B (R+B'Pi_hat B)^{-1},
/// H_k = (R + B' Pi_check B)^{-1}, bounds taken at stage k+1.
template <int N, int M>
ConditionPencil<N, M> stochastic_pencil(const ProblemSpec<N, M>& spec, const RiccatiBounds<N, M>& bounds) {
  ConditionPencil<N, M> out;
  for (std::size_t k = 0; k < spec.horizon; ++k) {
    const auto& up = bounds.cost_to_go_upper[k + 1];
    const auto& lo = bounds.cost_to_go_lower[k + 1];
    out.fixed.push_back(detail::condition_leading(spec, k, up, lo, spec.noise_before(k)));
    const auto& B = spec.input_map[k];
    out.slope.push_back(pd_inverse(symmetrize(spec.input_cost[k] + B.transpose() * lo * B), "R + B'Pi_lower B", k));
  }
  return out;
}

/// G_k = (R+B'Pi_check B)^{-1} B' Pi_hat A Sigma_zero_k A' Pi_hat B (R+B'Pi_check B)^{-1},
/// H_k = (R + B' Pi_hat B)^{-1}.
template <int N, int M>
ConditionPencil<N, M> deterministic_pencil(const ProblemSpec<N, M>& spec, const RiccatiBounds<N, M>& bounds) {
  const auto open_loop = sigma_x_zero(spec);
  ConditionPencil<N, M> out;
  for (std::size_t k = 0; k < spec.horizon; ++k) {
    const auto& up = bounds.cost_to_go_upper[k + 1];
    const auto& lo = bounds.cost_to_go_lower[k + 1];
    out.fixed.push_back(detail::condition_leading(spec, k, lo, up, open_loop[k]));
    const auto& B = spec.input_map[k];
    out.slope.push_back(pd_inverse(symmetrize(spec.input_cost[k] + B.transpose() * up * B), "R + B'Pi_upper B", k));
  }
  return out;
}

template <int N, int M>
ConditionCheck<N, M> stochastic_condition(const ProblemSpec<N, M>& spec) {
  return detail::evaluate_pencil(stochastic_pencil(spec, riccati_bounds(spec)), spec.epsilon, true);
}

template <int N, int M>
ConditionCheck<N, M> deterministic_condition(const ProblemSpec<N, M>& spec) {
  return detail::evaluate_pencil(deterministic_pencil(spec, riccati_bounds(spec)), spec.epsilon, false);
}

template <int N, int M>
AssumptionFlags assumption_flags(const ProblemSpec<N, M>& spec) {
  AssumptionFlags out;
  for (std::size_t k = 0; k < spec.horizon; ++k) {
    Eigen::FullPivLU<typename Shapes<N, M>::StateMatrix> a_lu(spec.dynamics[k]);
    out.a_invertible = out.a_invertible && a_lu.isInvertible();
    Eigen::FullPivLU<typename Shapes<N, M>::InputMatrix> b_lu(spec.input_map[k]);
    out.b_full_column_rank = out.b_full_column_rank && b_lu.rank() == spec.input_map[k].cols();
  }
  return out;
}

template <int N, int M>
ConditionReport<N, M> check_conditions(const ProblemSpec<N, M>& spec) {
  validate(spec);
  const auto bounds = riccati_bounds(spec);
  ConditionReport<N, M> rep;
  rep.epsilon = spec.epsilon;
  rep.stochastic = detail::evaluate_pencil(stochastic_pencil(spec, bounds), spec.epsilon, true);
  rep.deterministic = detail::evaluate_pencil(deterministic_pencil(spec, bounds), spec.epsilon, false);
  rep.assumptions = assumption_flags(spec);
  if (!rep.assumptions.hold()) {
    rep.stochastic_verdict = StochasticVerdict::AssumptionsUnmet;
  } else {
    rep.stochastic_verdict = rep.stochastic.holds ? StochasticVerdict::Guaranteed : StochasticVerdict::NotGuaranteed;
  }
  return rep;
}

namespace detail {

// Extreme generalized eigenvalue of (G, H), H PD: eig of H^{-1/2} G H^{-1/2}.
template <typename Mat>
double pencil_eig(const Mat& G, const Mat& H, bool smallest) {
  const Mat root_inv = pd_inverse(psd_sqrt(H), "H^{1/2}");
  const Mat scaled = symmetrize(root_inv * G * root_inv);
  return smallest ? min_eig(scaled) : max_eig(scaled);
}

}  // namespace detail

/// Exact thresholds of both conditions. Epsilon-independent: the spec's
/// own epsilon is ignored.
template <int N, int M>
EpsilonThresholds epsilon_thresholds(const ProblemSpec<N, M>& spec) {
  validate(spec);
  const auto bounds = riccati_bounds(spec);
  const auto sto = stochastic_pencil(spec, bounds);
  const auto det = deterministic_pencil(spec, bounds);

  EpsilonThresholds out;
  out.eps_stochastic_max = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < spec.horizon; ++k) {
    double s = detail::pencil_eig(sto.fixed[k], sto.slope[k], true);
    // a singular G_k leaves only roundoff here; no positive epsilon can pass
    if (s <= kRelativeEigTol * (1.0 + detail::pencil_eig(sto.fixed[k], sto.slope[k], false))) {
      s = 0.0;
      out.stochastic_degenerate = true;
    }
    out.stochastic_max.push_back(s);
    out.eps_stochastic_max = std::min(out.eps_stochastic_max, s);

    const double d = std::max(0.0, detail::pencil_eig(det.fixed[k], det.slope[k], false));
    out.deterministic_min.push_back(d);
    out.eps_deterministic_min = std::max(out.eps_deterministic_min, d);
  }

  constexpr double kProbe = 1e-6;
  bool ok = true;
  if (out.eps_stochastic_max > 0.0) {
    ok = ok && detail::evaluate_pencil(sto, out.eps_stochastic_max * (1.0 - kProbe), true).holds;
    ok = ok && !detail::evaluate_pencil(sto, out.eps_stochastic_max * (1.0 + kProbe), true).holds;
  }
  if (out.eps_deterministic_min > 0.0) {
    ok = ok && detail::evaluate_pencil(det, out.eps_deterministic_min * (1.0 + kProbe), false).holds;
    ok = ok && !detail::evaluate_pencil(det, out.eps_deterministic_min * (1.0 - kProbe), false).holds;
  }
  out.verified = ok;
  return out;
}

}  // namespace miocp
