#pragma once

// The two half-steps of the alternating scheme (policy from prior, prior from
// policy), closed-loop moment propagation, the reduced objective over prior
// covariances with its matrix derivative, and the KL divergence between
// possibly degenerate Gaussians.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include <Eigen/LU>

#include "miocp/problem.hpp"
#include "miocp/psd_linalg.hpp"
#include "miocp/riccati.hpp"

namespace miocp {

template <int N = Dynamic, int M = Dynamic>
struct PolicyStep {
  GaussianPolicy<N, M> policy;
  /// Centers r_0..r_T of the quadratic value functions, r_T = 0; all zero for zero-mean priors.
  std::vector<typename Shapes<N, M>::StateVector> value_center;
  RiccatiSolution<N, M> riccati;
  /// log|I + S C_k S| per stage, S = Sigma_rho_k^{1/2}: the KL part of the reduced objective.
  std::vector<double> logdet_ratio;
};

template <int N = Dynamic, int M = Dynamic>
struct GradientSequence {
  std::vector<typename Shapes<N, M>::InputSquare> derivative;      // dJ/dSigma_rho_k, symmetric
  std::vector<typename Shapes<N, M>::GainMatrix> feedback_map;     // E_k = Sigma_Q_k B' Pi_{k+1} A / eps
  std::vector<typename Shapes<N, M>::InputSquare> total_precision; // L_k = (Sigma_Q_k + Sigma_rho_k)^{-1}
  std::vector<typename Shapes<N, M>::StateMatrix> state_cov;       // Sigma_x_k under the optimal policy
};

namespace detail {

template <int N, int M>
void require_zero_mean(const GaussianPrior<N, M>& prior, const char* who) {
  if (!prior.zero_mean()) throw Error(ErrorCode::InvalidArgument, std::string(who) + " requires zero prior means");
}

template <typename Mat>
void require_invertible_dynamics(const Mat& A, std::size_t k) {
  Eigen::FullPivLU<Mat> lu(A);
  if (!lu.isInvertible()) {
    throw Error(ErrorCode::NonInvertibleA, "nonzero prior means need invertible A_k", "A", k);
  }
}

// Reduced objective from an already computed policy step. The symmetric root
// is a valid factor here: |I + S C S| equals |Sigma_rho + Sigma_Q| / |Sigma_Q|.
template <int N, int M>
double objective_from_step(const ProblemSpec<N, M>& spec, const PolicyStep<N, M>& step) {
  const auto& ric = step.riccati;
  double total = (ric.cost_to_go[0] * spec.initial_cov).trace();
  for (std::size_t k = 0; k < spec.horizon; ++k) {
    total += spec.epsilon * step.logdet_ratio[k];
    total += (ric.cost_to_go[k + 1] * spec.process_noise[k]).trace();
  }
  return 0.5 * total;
}

}  // namespace detail

/// Optimal policy for a fixed prior: affine Gaussian with
///   cov_k  = S (I + S C_k S)^{-1} S,  S = Sigma_rho_k^{1/2},
///   gain_k = -(1/eps) cov_k B' Pi_{k+1} A,
///   offset_k = (I + Sigma_rho_k C_k)^{-1} mu_rho_k + (1/eps) cov_k B' Pi_{k+1} r_{k+1}.
/// Nonzero prior means require every A_k to be invertible.
template <int N, int M>
void policy_from_prior(const ProblemSpec<N, M>& spec, const GaussianPrior<N, M>& prior, PolicyStep<N, M>& step) {
  using Shape = Shapes<N, M>;
  using InputSquare = typename Shape::InputSquare;

  const std::size_t T = spec.horizon;
  const Eigen::Index n = spec.n();
  const Eigen::Index m = spec.m();
  const bool centered = prior.zero_mean();
  if (!centered) {
    for (std::size_t k = 0; k < T; ++k) detail::require_invertible_dynamics(spec.dynamics[k], k);
  }

  solve_riccati(spec, prior, step.riccati);
  const auto& ric = step.riccati;
  auto& pol = step.policy;
  pol.gain.resize(T);
  pol.offset.resize(T);
  pol.cov.resize(T);
  step.value_center.resize(T + 1);
  step.logdet_ratio.resize(T);
  for (auto& q : pol.offset) q.setZero(m);
  for (auto& r : step.value_center) r.setZero(n);

  for (std::size_t k = 0; k < T; ++k) {
    const auto& S = ric.prior_sqrt[k];
    const InputSquare middle = symmetrize(InputSquare::Identity(m, m) + S * ric.input_precision[k] * S);
    const auto llt = pd_factorize(middle, "I + S C S", k);
    step.logdet_ratio[k] = llt.logdet();
    pol.cov[k] = symmetrize(S * llt.solve(S));
    pol.gain[k] = -(pol.cov[k] * spec.input_map[k].transpose() * ric.cost_to_go[k + 1] * spec.dynamics[k]) /
                  spec.epsilon;
  }

  if (!centered) {
    for (std::size_t k = T; k-- > 0;) {
      const auto& A = spec.dynamics[k];
      const auto& B = spec.input_map[k];
      const auto& next = ric.cost_to_go[k + 1];
      const InputSquare shrink_mat = InputSquare::Identity(m, m) + prior.cov[k] * ric.input_precision[k];
      const typename Shape::InputVector shrunk = shrink_mat.partialPivLu().solve(prior.mean[k]);
      const auto pi_llt = pd_factorize(ric.cost_to_go[k], "Pi_k", k);
      step.value_center[k] = A.partialPivLu().solve(step.value_center[k + 1]) -
                             pi_llt.solve(A.transpose() * next * B * shrunk);
      pol.offset[k] = shrunk + pol.cov[k] * B.transpose() * next * step.value_center[k + 1] / spec.epsilon;
    }
  }
}

template <int N, int M>
PolicyStep<N, M> policy_from_prior(const ProblemSpec<N, M>& spec, const GaussianPrior<N, M>& prior) {
  PolicyStep<N, M> step;
  policy_from_prior(spec, prior, step);
  return step;
}

/// Closed-loop state mean and covariance under an affine Gaussian policy.
template <int N, int M>
void propagate_moments(const ProblemSpec<N, M>& spec, const GaussianPolicy<N, M>& policy, StateMoments<N, M>& mom) {
  using StateMatrix = typename Shapes<N, M>::StateMatrix;
  const std::size_t T = spec.horizon;
  mom.mean.resize(T + 1);
  mom.cov.resize(T + 1);
  mom.mean[0] = Shapes<N, M>::StateVector::Zero(spec.n());
  mom.cov[0] = spec.initial_cov;
  for (std::size_t k = 0; k < T; ++k) {
    const auto& B = spec.input_map[k];
    const StateMatrix closed = spec.dynamics[k] + B * policy.gain[k];
    mom.mean[k + 1] = closed * mom.mean[k] + B * policy.offset[k];
    mom.cov[k + 1] = symmetrize(closed * mom.cov[k] * closed.transpose() + B * policy.cov[k] * B.transpose() +
                                spec.process_noise[k]);
  }
}

template <int N, int M>
StateMoments<N, M> propagate_moments(const ProblemSpec<N, M>& spec, const GaussianPolicy<N, M>& policy) {
  StateMoments<N, M> mom;
  propagate_moments(spec, policy, mom);
  return mom;
}

/// Optimal prior for a fixed policy: the input marginal N(P mu_x + q, Sigma_pi + P Sigma_x P').
template <int N, int M>
void prior_from_policy(const ProblemSpec<N, M>& spec, const GaussianPolicy<N, M>& policy,
                       const StateMoments<N, M>& moments, GaussianPrior<N, M>& out) {
  out.mean.resize(spec.horizon);
  out.cov.resize(spec.horizon);
  for (std::size_t k = 0; k < spec.horizon; ++k) {
    const auto& P = policy.gain[k];
    out.mean[k] = P * moments.mean[k] + policy.offset[k];
    out.cov[k] = symmetrize(policy.cov[k] + P * moments.cov[k] * P.transpose());
  }
}

template <int N, int M>
GaussianPrior<N, M> prior_from_policy(const ProblemSpec<N, M>& spec, const GaussianPolicy<N, M>& policy,
                                      const StateMoments<N, M>& moments) {
  GaussianPrior<N, M> out;
  prior_from_policy(spec, policy, moments, out);
  return out;
}

/// Reduced objective over zero-mean priors,
///   1/2 [Tr(Pi_0 Sigma_x_ini) + sum_k eps log|I + F_k' C_k F_k| + Tr(Pi_{k+1} Sigma_w_k)],
/// with F_k F_k' = Sigma_rho_k a full-column-rank factor (empty when Sigma_rho_k = 0).
template <int N, int M>
double objective_reduced(const ProblemSpec<N, M>& spec, const GaussianPrior<N, M>& prior) {
  detail::require_zero_mean(prior, "objective_reduced");
  const auto ric = solve_riccati(spec, prior);
  double total = (ric.cost_to_go[0] * spec.initial_cov).trace();
  for (std::size_t k = 0; k < spec.horizon; ++k) {
    const auto fac = psd_factor(prior.cov[k], kRelativeEigTol * prior.cov[k].norm());
    if (fac.rank > 0) {
      const Eigen::MatrixXd inner = Eigen::MatrixXd::Identity(fac.rank, fac.rank) +
                                    fac.factor.transpose() * ric.input_precision[k] * fac.factor;
      total += spec.epsilon * pd_logdet(symmetrize(inner), "I + F'CF");
    }
    total += (ric.cost_to_go[k + 1] * spec.process_noise[k]).trace();
  }
  return 0.5 * total;
}

/// Matrix derivative of the reduced objective,
///   (eps/2) L_k (Sigma_rho_k + Sigma_Q_k - E_k Sigma_x_k E_k') L_k,
/// with Sigma_x_k propagated under the optimal policy for this prior.
template <int N, int M>
GradientSequence<N, M> gradient_reduced(const ProblemSpec<N, M>& spec, const GaussianPrior<N, M>& prior) {
  detail::require_zero_mean(prior, "gradient_reduced");
  const auto step = policy_from_prior(spec, prior);
  const auto mom = propagate_moments(spec, step.policy);
  const auto& ric = step.riccati;

  GradientSequence<N, M> out;
  out.state_cov = mom.cov;
  for (std::size_t k = 0; k < spec.horizon; ++k) {
    const auto& q_cov = ric.q_covariance[k];
    typename Shapes<N, M>::GainMatrix E =
        q_cov * spec.input_map[k].transpose() * ric.cost_to_go[k + 1] * spec.dynamics[k] / spec.epsilon;
    const typename Shapes<N, M>::InputSquare L = pd_inverse(symmetrize(q_cov + prior.cov[k]), "Sigma_Q + Sigma_rho", k);
    out.derivative.push_back(
        symmetrize(0.5 * spec.epsilon * L * (prior.cov[k] + q_cov - E * mom.cov[k] * E.transpose()) * L));
    out.feedback_map.push_back(std::move(E));
    out.total_precision.push_back(L);
  }
  return out;
}

/// sum_k Tr(derivative_k (target_k - Sigma_rho_k)).
template <int N, int M>
double directional_derivative(const GradientSequence<N, M>& grad, const GaussianPrior<N, M>& prior,
                              const std::vector<typename Shapes<N, M>::InputSquare>& targets) {
  double total = 0.0;
  for (std::size_t k = 0; k < grad.derivative.size(); ++k) {
    total += (grad.derivative[k] * (targets[k] - prior.cov[k])).trace();
  }
  return total;
}

// ---------------------------------------------------------------------------
// KL divergence between mutually absolutely continuous (possibly degenerate) Gaussians.

template <typename Vec, typename Mat>
struct Gaussian {
  Vec mean;
  Mat cov;
};

template <typename Vec, typename Mat>
Gaussian(Vec, Mat) -> Gaussian<Vec, Mat>;

/// Covariance-only part of KL[N(., cov_p) || N(., cov_q)] on their common image,
/// reusable across mean differences (e.g. one per visited state in a rollout).
template <typename Mat>
class GaussianKl {
 public:
  GaussianKl(const Mat& cov_p, const Mat& cov_q, double tol = kImageTol) : tol_(tol) {
    const auto eq = sym_eig(cov_q);
    const auto ep = sym_eig(cov_p);
    rank_ = count_rank(eq.values);
    if (count_rank(ep.values) != rank_) {
      throw Error(ErrorCode::ImageMismatch, "covariance ranks differ (" + std::to_string(count_rank(ep.values)) +
                                                " vs " + std::to_string(rank_) + ")");
    }
    basis_ = eq.basis.leftCols(rank_);
    inv_values_.resize(rank_);
    double logdet_q = 0.0;
    for (Eigen::Index i = 0; i < rank_; ++i) {
      inv_values_(i) = 1.0 / eq.values(i);
      logdet_q += std::log(eq.values(i));
    }
    if (rank_ == 0) return;

    const Eigen::MatrixXd up = ep.basis.leftCols(rank_);
    const double sin_angle = (up - basis_ * (basis_.transpose() * up)).norm();
    if (sin_angle > tol_) {
      throw Error(ErrorCode::ImageMismatch, "covariance images differ (sin angle " + std::to_string(sin_angle) + ")");
    }
    const Eigen::MatrixXd hp = symmetrize(basis_.transpose() * cov_p * basis_);
    const double logdet_p = pd_logdet(hp, "restricted cov_p");
    const double trace_term = (inv_values_.asDiagonal() * hp).trace();
    constant_ = 0.5 * (logdet_q - logdet_p - static_cast<double>(rank_) + trace_term);
  }

  /// KL for mean difference d = mean_p - mean_q; `scale` sets the containment tolerance.
  template <typename Vec>
  double operator()(const Vec& d, double scale = 1.0) const {
    const Eigen::VectorXd coords = basis_.transpose() * d;
    const double outside = (d - basis_ * coords).norm();
    if (outside > tol_ * (scale + d.norm())) {
      throw Error(ErrorCode::ImageMismatch, "mean difference leaves the covariance image");
    }
    const double quad = coords.cwiseAbs2().dot(inv_values_);
    return std::max(0.0, constant_ + 0.5 * quad);
  }

  Eigen::Index rank() const { return rank_; }

 private:
  template <typename Values>
  static Eigen::Index count_rank(const Values& v) {
    const double t = v.size() == 0 ? 0.0 : kRelativeEigTol * v.cwiseAbs().maxCoeff();
    Eigen::Index r = 0;
    while (r < v.size() && v(r) > t) ++r;
    return r;
  }

  double tol_;
  Eigen::Index rank_ = 0;
  Eigen::MatrixXd basis_;
  Eigen::VectorXd inv_values_;
  double constant_ = 0.0;
};

/// KL[p || q]. Throws ImageMismatch when the two are not mutually absolutely
/// continuous (the divergence is +infinity there).
template <typename Vec, typename Mat>
double kl_gaussian(const Gaussian<Vec, Mat>& p, const Gaussian<Vec, Mat>& q, double tol = kImageTol) {
  const GaussianKl<typename Mat::PlainObject> kl(p.cov, q.cov, tol);
  return kl((p.mean - q.mean).eval(), 1.0 + p.mean.norm() + q.mean.norm());
}

}  // namespace miocp
