#pragma once

// Problem instance and the Gaussian prior / policy / state-moment types.
//
// The system is x_{k+1} = A_k x_k + B_k u_k + w_k, w_k ~ N(0, Sigma_w_k),
// x_0 ~ N(0, Sigma_x_ini), over stages k = 0..T-1, with stage cost
// 1/2 |u_k|^2_{R_k} + epsilon * KL[policy_k(.|x_k) || prior_k] and terminal
// cost 1/2 |x_T|^2_F. N and M are the compile-time state / input dimensions.

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "miocp/errors.hpp"
#include "miocp/psd_linalg.hpp"

namespace miocp {

inline constexpr int Dynamic = Eigen::Dynamic;

/// Definiteness threshold (absolute, on the smallest eigenvalue) used by validate().
inline constexpr double kDefinitenessTol = 1e-12;

/// Tolerance on |(I - S S^+) P| for the policy image condition Im(P) in Im(S).
inline constexpr double kImageTol = 1e-8;

template <int N = Dynamic, int M = Dynamic>
struct Shapes {
  static constexpr int state_dim = N;
  static constexpr int input_dim = M;
  using StateMatrix = Eigen::Matrix<double, N, N>;  // n x n
  using InputMatrix = Eigen::Matrix<double, N, M>;  // n x m
  using GainMatrix = Eigen::Matrix<double, M, N>;   // m x n
  using InputSquare = Eigen::Matrix<double, M, M>;  // m x m
  using StateVector = Eigen::Matrix<double, N, 1>;
  using InputVector = Eigen::Matrix<double, M, 1>;
};

template <int N = Dynamic, int M = Dynamic>
struct ProblemSpec : Shapes<N, M> {
  using typename Shapes<N, M>::StateMatrix;
  using typename Shapes<N, M>::InputMatrix;
  using typename Shapes<N, M>::InputSquare;

  std::size_t horizon = 0;                   // T
  std::vector<StateMatrix> dynamics;         // A_k
  std::vector<InputMatrix> input_map;        // B_k
  std::vector<InputSquare> input_cost;       // R_k
  StateMatrix terminal_cost;                 // F
  std::vector<StateMatrix> process_noise;    // Sigma_w_k
  StateMatrix initial_cov;                   // Sigma_x_ini
  double epsilon = 1.0;                      // temperature, cost units per nat

  Eigen::Index n() const { return dynamics.empty() ? terminal_cost.rows() : dynamics.front().rows(); }
  Eigen::Index m() const { return input_map.empty() ? 0 : input_map.front().cols(); }

  /// Broadcasts one set of matrices across all T stages.
  static ProblemSpec time_invariant(std::size_t T, const StateMatrix& A, const InputMatrix& B,
                                    const InputSquare& R, const StateMatrix& F, const StateMatrix& Sigma_w,
                                    const StateMatrix& Sigma_x_ini, double epsilon) {
    ProblemSpec spec;
    spec.horizon = T;
    spec.dynamics.assign(T, A);
    spec.input_map.assign(T, B);
    spec.input_cost.assign(T, R);
    spec.terminal_cost = F;
    spec.process_noise.assign(T, Sigma_w);
    spec.initial_cov = Sigma_x_ini;
    spec.epsilon = epsilon;
    return spec;
  }

  ProblemSpec with_epsilon(double eps) const {
    ProblemSpec copy = *this;
    copy.epsilon = eps;
    return copy;
  }

  /// Sigma_w_{k-1}, with Sigma_w_{-1} := Sigma_x_ini.
  const StateMatrix& noise_before(std::size_t k) const { return k == 0 ? initial_cov : process_noise[k - 1]; }
};

/// Per-stage Gaussian prior N(mean_k, cov_k) over inputs; cov_k may be singular.
template <int N = Dynamic, int M = Dynamic>
struct GaussianPrior {
  using InputVector = typename Shapes<N, M>::InputVector;
  using InputSquare = typename Shapes<N, M>::InputSquare;

  std::vector<InputVector> mean;
  std::vector<InputSquare> cov;

  std::size_t size() const { return cov.size(); }
  bool zero_mean() const {
    for (const auto& mu : mean)
      if (!mu.isZero(0.0)) return false;
    return true;
  }
};

/// Per-stage affine Gaussian policy u ~ N(gain_k x + offset_k, cov_k).
template <int N = Dynamic, int M = Dynamic>
struct GaussianPolicy {
  using GainMatrix = typename Shapes<N, M>::GainMatrix;
  using InputVector = typename Shapes<N, M>::InputVector;
  using InputSquare = typename Shapes<N, M>::InputSquare;

  std::vector<GainMatrix> gain;
  std::vector<InputVector> offset;
  std::vector<InputSquare> cov;

  std::size_t size() const { return cov.size(); }
};

/// State mean and covariance for k = 0..T.
template <int N = Dynamic, int M = Dynamic>
struct StateMoments {
  std::vector<typename Shapes<N, M>::StateVector> mean;
  std::vector<typename Shapes<N, M>::StateMatrix> cov;
};

namespace detail {

template <typename Mat>
void require_shape(const Mat& X, Eigen::Index rows, Eigen::Index cols, const char* field,
                   std::optional<std::size_t> stage) {
  if (X.rows() != rows || X.cols() != cols) {
    throw Error(ErrorCode::DimensionMismatch,
                "expected " + std::to_string(rows) + "x" + std::to_string(cols) + ", got " +
                    std::to_string(X.rows()) + "x" + std::to_string(X.cols()),
                field, stage);
  }
  if (!X.allFinite()) throw Error(ErrorCode::InvalidArgument, "non-finite entries", field, stage);
}

template <typename Mat>
void require_pd(const Mat& X, const char* field, std::optional<std::size_t> stage) {
  try {
    require_symmetric(X, field);
  } catch (const Error& e) {
    throw Error(ErrorCode::NotSymmetric, e.what(), field, stage);
  }
  const double lo = min_eig(X);
  if (!(lo > kDefinitenessTol)) {
    throw Error(ErrorCode::NonPositiveDefinite, "smallest eigenvalue " + std::to_string(lo), field, stage);
  }
}

template <typename Mat>
void require_psd(const Mat& X, const char* field, std::optional<std::size_t> stage) {
  try {
    require_symmetric(X, field);
  } catch (const Error& e) {
    throw Error(ErrorCode::NotSymmetric, e.what(), field, stage);
  }
  if (X.size() == 0) return;
  const double lo = min_eig(X);
  const double tol = kRelativeEigTol * (1.0 + X.cwiseAbs().maxCoeff());
  if (lo < -tol) throw Error(ErrorCode::NotPsd, "smallest eigenvalue " + std::to_string(lo), field, stage);
}

template <typename List>
void require_length(const List& list, std::size_t T, const char* field) {
  if (list.size() != T) {
    throw Error(ErrorCode::DimensionMismatch,
                "expected " + std::to_string(T) + " stages, got " + std::to_string(list.size()), field);
  }
}

}  // namespace detail

/// Checks the standing assumptions (dimensions, R_k, F, Sigma_w_k, Sigma_x_ini PD,
/// epsilon > 0). Throws an Error naming the first violation; returns the spec unchanged.
template <int N, int M>
const ProblemSpec<N, M>& validate(const ProblemSpec<N, M>& spec) {
  if (spec.horizon < 1) throw Error(ErrorCode::InvalidArgument, "horizon must be at least 1", "T");
  if (!(spec.epsilon > 0.0) || !std::isfinite(spec.epsilon)) {
    throw Error(ErrorCode::NonPositiveEpsilon, "epsilon = " + std::to_string(spec.epsilon), "epsilon");
  }
  const std::size_t T = spec.horizon;
  detail::require_length(spec.dynamics, T, "A");
  detail::require_length(spec.input_map, T, "B");
  detail::require_length(spec.input_cost, T, "R");
  detail::require_length(spec.process_noise, T, "sigma_w");

  const Eigen::Index n = spec.dynamics.front().rows();
  const Eigen::Index m = spec.input_map.front().cols();
  if (n < 1) throw Error(ErrorCode::DimensionMismatch, "state dimension must be positive", "A", 0);
  if (m < 1) throw Error(ErrorCode::DimensionMismatch, "input dimension must be positive", "B", 0);

  for (std::size_t k = 0; k < T; ++k) {
    detail::require_shape(spec.dynamics[k], n, n, "A", k);
    detail::require_shape(spec.input_map[k], n, m, "B", k);
    detail::require_shape(spec.input_cost[k], m, m, "R", k);
    detail::require_shape(spec.process_noise[k], n, n, "sigma_w", k);
  }
  detail::require_shape(spec.terminal_cost, n, n, "F", std::nullopt);
  detail::require_shape(spec.initial_cov, n, n, "sigma_x_ini", std::nullopt);

  for (std::size_t k = 0; k < T; ++k) detail::require_pd(spec.input_cost[k], "R", k);
  detail::require_pd(spec.terminal_cost, "F", std::nullopt);
  for (std::size_t k = 0; k < T; ++k) detail::require_pd(spec.process_noise[k], "sigma_w", k);
  detail::require_pd(spec.initial_cov, "sigma_x_ini", std::nullopt);
  return spec;
}

/// Zero-mean identity-covariance prior: the strictly PD initialization of the alternation.
template <int N, int M>
GaussianPrior<N, M> default_prior(const ProblemSpec<N, M>& spec) {
  using Shape = Shapes<N, M>;
  const Eigen::Index m = spec.m();
  GaussianPrior<N, M> prior;
  prior.mean.assign(spec.horizon, Shape::InputVector::Zero(m));
  prior.cov.assign(spec.horizon, Shape::InputSquare::Identity(m, m));
  return prior;
}

/// Zero-mean prior with the given per-stage covariances.
template <int N, int M>
GaussianPrior<N, M> zero_mean_prior(const std::vector<typename Shapes<N, M>::InputSquare>& covs) {
  GaussianPrior<N, M> prior;
  prior.cov = covs;
  for (const auto& c : covs) prior.mean.push_back(Shapes<N, M>::InputVector::Zero(c.rows()));
  return prior;
}

template <int N, int M>
void check_prior(const ProblemSpec<N, M>& spec, const GaussianPrior<N, M>& prior) {
  detail::require_length(prior.cov, spec.horizon, "prior.cov");
  detail::require_length(prior.mean, spec.horizon, "prior.mean");
  for (std::size_t k = 0; k < spec.horizon; ++k) {
    detail::require_shape(prior.cov[k], spec.m(), spec.m(), "prior.cov", k);
    detail::require_shape(prior.mean[k], spec.m(), 1, "prior.mean", k);
    detail::require_psd(prior.cov[k], "prior.cov", k);
  }
}

/// Policy-class membership: dimensions, PSD covariances and Im(gain_k) in Im(cov_k).
template <int N, int M>
void check_policy(const ProblemSpec<N, M>& spec, const GaussianPolicy<N, M>& policy) {
  detail::require_length(policy.cov, spec.horizon, "policy.cov");
  detail::require_length(policy.gain, spec.horizon, "policy.gain");
  detail::require_length(policy.offset, spec.horizon, "policy.offset");
  for (std::size_t k = 0; k < spec.horizon; ++k) {
    detail::require_shape(policy.gain[k], spec.m(), spec.n(), "policy.gain", k);
    detail::require_shape(policy.offset[k], spec.m(), 1, "policy.offset", k);
    detail::require_shape(policy.cov[k], spec.m(), spec.m(), "policy.cov", k);
    detail::require_psd(policy.cov[k], "policy.cov", k);
    const auto& S = policy.cov[k];
    using Square = typename Shapes<N, M>::InputSquare;
    const auto residual = ((Square::Identity(S.rows(), S.cols()) - S * pinv(S)) * policy.gain[k]).eval();
    const double scale = 1.0 + policy.gain[k].norm();
    if (residual.norm() > kImageTol * scale) {
      throw Error(ErrorCode::ImageMismatch, "gain leaves the image of the covariance", "policy.gain", k);
    }
  }
}

/// Converts between compile-time dimension choices (e.g. dynamic -> fixed 2x1).
template <int N2, int M2, int N, int M>
ProblemSpec<N2, M2> cast_spec(const ProblemSpec<N, M>& spec) {
  if ((N2 != Dynamic && spec.n() != N2) || (M2 != Dynamic && spec.m() != M2)) {
    throw Error(ErrorCode::DimensionMismatch, "cast_spec: runtime dimensions do not match target");
  }
  ProblemSpec<N2, M2> out;
  out.horizon = spec.horizon;
  for (const auto& X : spec.dynamics) out.dynamics.emplace_back(X);
  for (const auto& X : spec.input_map) out.input_map.emplace_back(X);
  for (const auto& X : spec.input_cost) out.input_cost.emplace_back(X);
  for (const auto& X : spec.process_noise) out.process_noise.emplace_back(X);
  out.terminal_cost = spec.terminal_cost;
  out.initial_cov = spec.initial_cov;
  out.epsilon = spec.epsilon;
  return out;
}

template <int N2, int M2, int N, int M>
GaussianPrior<N2, M2> cast_prior(const GaussianPrior<N, M>& prior) {
  GaussianPrior<N2, M2> out;
  for (const auto& v : prior.mean) out.mean.emplace_back(v);
  for (const auto& c : prior.cov) out.cov.emplace_back(c);
  return out;
}

template <int N2, int M2, int N, int M>
GaussianPolicy<N2, M2> cast_policy(const GaussianPolicy<N, M>& policy) {
  GaussianPolicy<N2, M2> out;
  for (const auto& g : policy.gain) out.gain.emplace_back(g);
  for (const auto& v : policy.offset) out.offset.emplace_back(v);
  for (const auto& c : policy.cov) out.cov.emplace_back(c);
  return out;
}

}  // namespace miocp
