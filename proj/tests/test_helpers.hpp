#pragma once

// Shared fixtures for the test suite: the scalar and two-state reference
// problems, random instance generators and a few brute-force oracles that
// deliberately avoid the library's own code paths.

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "miocp/problem.hpp"

namespace miocp::testing {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using Mat1 = Eigen::Matrix<double, 1, 1>;

inline Mat1 scalar(double v) { return Mat1::Constant(v); }

/// n = m = T = 1, A = B = R = F = 1, Sigma_w = 0.1, Sigma_x_ini = 2.
inline ProblemSpec<1, 1> scalar_spec(double eps) {
  return ProblemSpec<1, 1>::time_invariant(1, scalar(1), scalar(1), scalar(1), scalar(1), scalar(0.1), scalar(2),
                                           eps);
}

inline ProblemSpec<> scalar_dynamic(double eps) { return cast_spec<Dynamic, Dynamic>(scalar_spec(eps)); }

/// Fixed point of the scalar problem: max(0, sigma0 / 4 - eps / 2) with sigma0 = 2.
inline double scalar_fixed_point(double eps) { return std::max(0.0, 0.5 - eps / 2.0); }

/// Five-stage two-state reference system.
inline ProblemSpec<2, 1> two_state_spec(double eps) {
  Eigen::Matrix2d A;
  A << 0.9, 0.2, 0.1, 1.1;
  Eigen::Vector2d B(0.0, 0.2);
  Eigen::Matrix2d Sx;
  Sx << 7, 3, 3, 5;
  return ProblemSpec<2, 1>::time_invariant(5, A, B, scalar(1), 10 * Eigen::Matrix2d::Identity(),
                                           1e-3 * Eigen::Matrix2d::Identity(), Sx, eps);
}

class Random {
 public:
  explicit Random(std::uint64_t seed) : gen_(seed) {}

  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(gen_); }
  double log_uniform(double lo, double hi) { return std::exp(uniform(std::log(lo), std::log(hi))); }
  int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(gen_); }
  double normal() { return std::normal_distribution<double>()(gen_); }

  Mat gaussian(Eigen::Index r, Eigen::Index c) {
    Mat X(r, c);
    for (Eigen::Index i = 0; i < X.size(); ++i) X.data()[i] = normal();
    return X;
  }

  Mat symmetric(Eigen::Index n) {
    const Mat G = gaussian(n, n);
    return 0.5 * (G + G.transpose());
  }

  /// PSD with the given rank (default full), scaled to eigenvalues of order `scale`.
  Mat psd(Eigen::Index n, Eigen::Index rank = -1, double scale = 1.0) {
    if (rank < 0) rank = n;
    const Mat G = gaussian(n, rank);
    return scale * G * G.transpose() / static_cast<double>(std::max<Eigen::Index>(rank, 1));
  }

  /// Well-conditioned SPD: eigenvalues in [lo, hi].
  Mat spd(Eigen::Index n, double lo = 0.2, double hi = 2.0) {
    const Eigen::HouseholderQR<Mat> qr(gaussian(n, n));
    const Mat Q = qr.householderQ();
    Vec d(n);
    for (Eigen::Index i = 0; i < n; ++i) d(i) = uniform(lo, hi);
    const Mat S = Q * d.asDiagonal() * Q.transpose();
    return 0.5 * (S + S.transpose());
  }

  /// Random valid problem. Dynamics have spectral radius around 1.
  ProblemSpec<> spec(Eigen::Index n, Eigen::Index m, std::size_t T, double eps) {
    ProblemSpec<> s;
    s.horizon = T;
    s.epsilon = eps;
    for (std::size_t k = 0; k < T; ++k) {
      s.dynamics.push_back(gaussian(n, n) / std::sqrt(static_cast<double>(n)));
      s.input_map.push_back(gaussian(n, m));
      s.input_cost.push_back(spd(m, 0.5, 2.0));
      s.process_noise.push_back(spd(n, 0.01, 0.2));
    }
    s.terminal_cost = spd(n, 0.5, 5.0);
    s.initial_cov = spd(n, 0.5, 3.0);
    return s;
  }

  /// Random dims within the given caps, epsilon log-uniform in [eps_lo, eps_hi].
  ProblemSpec<> spec_up_to(int n_max, int m_max, int T_max, double eps_lo = 0.05, double eps_hi = 2.0) {
    const int n = integer(1, n_max), m = integer(1, m_max), T = integer(1, T_max);
    return spec(n, m, static_cast<std::size_t>(T), log_uniform(eps_lo, eps_hi));
  }

  std::mt19937_64& engine() { return gen_; }

 private:
  std::mt19937_64 gen_;
};

inline double rel_err(double got, double want) { return std::abs(got - want) / std::max(1.0, std::abs(want)); }

/// Relative Frobenius distance with a unit floor on the scale.
template <typename A, typename B>
double rel_dist(const A& a, const B& b) {
  return (a - b).norm() / std::max(1.0, b.norm());
}

/// Riccati recursion written with explicit inverses and the prior precision,
///   Pi_k = A' Pi A - A' Pi B (eps Sigma_rho^{-1} + R + B' Pi B)^{-1} B' Pi A,
/// valid for PD priors only.
inline std::vector<Mat> riccati_oracle(const ProblemSpec<>& s, const std::vector<Mat>& prior_cov) {
  std::vector<Mat> Pi(s.horizon + 1);
  Pi[s.horizon] = s.terminal_cost;
  for (std::size_t k = s.horizon; k-- > 0;) {
    const Mat& A = s.dynamics[k];
    const Mat& B = s.input_map[k];
    const Mat& P = Pi[k + 1];
    const Mat inner = s.epsilon * prior_cov[k].inverse() + s.input_cost[k] + B.transpose() * P * B;
    Pi[k] = A.transpose() * P * A - A.transpose() * P * B * inner.inverse() * B.transpose() * P * A;
  }
  return Pi;
}

/// Reduced objective from explicit determinants (PD priors only).
inline double objective_oracle(const ProblemSpec<>& s, const std::vector<Mat>& prior_cov) {
  const auto Pi = riccati_oracle(s, prior_cov);
  double total = (Pi[0] * s.initial_cov).trace();
  for (std::size_t k = 0; k < s.horizon; ++k) {
    const Mat& B = s.input_map[k];
    const Mat q_cov = s.epsilon * (s.input_cost[k] + B.transpose() * Pi[k + 1] * B).inverse();
    total += s.epsilon * std::log((prior_cov[k] + q_cov).determinant() / q_cov.determinant());
    total += (Pi[k + 1] * s.process_noise[k]).trace();
  }
  return 0.5 * total;
}

/// Full-rank Gaussian KL from the textbook formula.
inline double kl_full_rank(const Vec& mp, const Mat& Sp, const Vec& mq, const Mat& Sq) {
  const Mat Sq_inv = Sq.inverse();
  const Vec d = mq - mp;
  return 0.5 * (std::log(Sq.determinant() / Sp.determinant()) - static_cast<double>(mp.size()) +
                (Sq_inv * Sp).trace() + d.dot(Sq_inv * d));
}

}  // namespace miocp::testing
