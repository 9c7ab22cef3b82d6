#pragma once

// Monte Carlo rollouts of an affine Gaussian policy and an empirical estimate
// of the original (policy, prior) objective, KL terms evaluated analytically.
//
// Random numbers: Philox4x32-10 (Salmon et al., counter-based), key = 64-bit
// seed, counter = (block lo, block hi, trajectory lo, trajectory hi). Each
// block yields two 53-bit uniforms and, via Box-Muller, two standard normals.
// Trajectory t therefore sees the same stream no matter how work is scheduled.

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <vector>

#include "miocp/fixed_point.hpp"
#include "miocp/problem.hpp"
#include "miocp/psd_linalg.hpp"

namespace miocp {

using Philox4x32Counter = std::array<std::uint32_t, 4>;
using Philox4x32Key = std::array<std::uint32_t, 2>;

/// Philox4x32 with 10 rounds.
inline Philox4x32Counter philox4x32(Philox4x32Counter ctr, Philox4x32Key key) {
  constexpr std::uint64_t kMul0 = 0xD2511F53u;
  constexpr std::uint64_t kMul1 = 0xCD9E8D57u;
  constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
  constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;
  for (int round = 0; round < 10; ++round) {
    if (round > 0) {
      key[0] += kWeyl0;
      key[1] += kWeyl1;
    }
    const std::uint64_t p0 = kMul0 * ctr[0];
    const std::uint64_t p1 = kMul1 * ctr[2];
    const auto hi0 = static_cast<std::uint32_t>(p0 >> 32), lo0 = static_cast<std::uint32_t>(p0);
    const auto hi1 = static_cast<std::uint32_t>(p1 >> 32), lo1 = static_cast<std::uint32_t>(p1);
    ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
  }
  return ctr;
}

/// Standard-normal stream for one trajectory.
class NormalStream {
 public:
  NormalStream(std::uint64_t seed, std::uint64_t stream)
      : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)}, stream_(stream) {}

  double operator()() {
    if (cached_) {
      cached_ = false;
      return spare_;
    }
    const auto bits = philox4x32({static_cast<std::uint32_t>(block_), static_cast<std::uint32_t>(block_ >> 32),
                                  static_cast<std::uint32_t>(stream_), static_cast<std::uint32_t>(stream_ >> 32)},
                                 key_);
    ++block_;
    const double u1 = to_unit(bits[0], bits[1]);  // in (0, 1), never 0
    const double u2 = to_unit(bits[2], bits[3]);
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_ = radius * std::sin(angle);
    cached_ = true;
    return radius * std::cos(angle);
  }

  std::uint64_t blocks_used() const { return block_; }

 private:
  static double to_unit(std::uint32_t a, std::uint32_t b) {
    const std::uint64_t bits53 = (static_cast<std::uint64_t>(a >> 5) << 26) | (b >> 6);
    return (static_cast<double>(bits53) + 0.5) * 0x1.0p-53;
  }

  Philox4x32Key key_;
  std::uint64_t stream_;
  std::uint64_t block_ = 0;
  double spare_ = 0.0;
  bool cached_ = false;
};

/// mean + F z with F F' = cov of full column rank and z ~ N(0, I_rank).
/// A zero covariance returns the mean and draws nothing.
template <typename Vec, typename Mat>
typename Vec::PlainObject sample_gaussian(const Vec& mean, const Mat& cov, NormalStream& rng) {
  const auto fac = psd_factor(cov, kRelativeEigTol * cov.norm());
  typename Vec::PlainObject out = mean;
  if (fac.rank == 0) return out;
  Eigen::VectorXd z(fac.rank);
  for (Eigen::Index i = 0; i < fac.rank; ++i) z(i) = rng();
  out.noalias() += fac.factor * z;
  return out;
}

template <int N = Dynamic, int M = Dynamic>
struct Trajectory {
  std::vector<typename Shapes<N, M>::StateVector> states;  // T+1
  std::vector<typename Shapes<N, M>::InputVector> inputs;  // T
  std::vector<double> stage_costs;                         // 1/2 u'Ru + eps KL
  double terminal_cost = 0.0;

  double total() const {
    double s = terminal_cost;
    for (double c : stage_costs) s += c;
    return s;
  }
};

template <int N = Dynamic, int M = Dynamic>
struct RolloutResult {
  double mean_cost = 0.0;
  double std_error = 0.0;  // infinite for a single trajectory
  std::size_t n_traj = 0;
  std::vector<double> costs;
  std::vector<Trajectory<N, M>> trajectories;  // filled only on request
};

/// Closed-loop Monte Carlo estimate of
///   E[ sum_k 1/2 |u_k|_R^2 + eps KL(policy_k(.|x_k) || prior_k) + 1/2 |x_T|_F^2 ].
template <int N, int M>
RolloutResult<N, M> rollout(const ProblemSpec<N, M>& spec, const GaussianPolicy<N, M>& policy,
                            const GaussianPrior<N, M>& prior, std::uint64_t seed, std::size_t n_traj,
                            bool keep_trajectories = false) {
  using Shape = Shapes<N, M>;
  using InputSquare = typename Shape::InputSquare;
  using StateMatrix = typename Shape::StateMatrix;
  if (n_traj == 0) throw Error(ErrorCode::InvalidArgument, "n_traj must be at least 1", "n_traj");
  validate(spec);
  check_policy(spec, policy);
  check_prior(spec, prior);

  const std::size_t T = spec.horizon;
  const auto init_fac = psd_factor(spec.initial_cov);
  std::vector<PsdFactor<StateMatrix>> noise_fac;
  std::vector<PsdFactor<InputSquare>> policy_fac;
  std::vector<GaussianKl<InputSquare>> stage_kl;
  for (std::size_t k = 0; k < T; ++k) {
    noise_fac.push_back(psd_factor(spec.process_noise[k]));
    policy_fac.push_back(psd_factor(policy.cov[k], kRelativeEigTol * policy.cov[k].norm()));
    stage_kl.emplace_back(policy.cov[k], prior.cov[k]);
  }

  auto draw = [](const auto& fac, NormalStream& rng) {
    Eigen::VectorXd z(fac.rank);
    for (Eigen::Index i = 0; i < fac.rank; ++i) z(i) = rng();
    return (fac.factor * z).eval();
  };

  RolloutResult<N, M> out;
  out.n_traj = n_traj;
  out.costs.reserve(n_traj);
  const Eigen::Index n = spec.n();
  for (std::size_t t = 0; t < n_traj; ++t) {
    NormalStream rng(seed, t);
    Trajectory<N, M> traj;
    typename Shape::StateVector x = Shape::StateVector::Zero(n);
    x += draw(init_fac, rng);
    if (keep_trajectories) traj.states.push_back(x);
    double cost = 0.0;
    for (std::size_t k = 0; k < T; ++k) {
      const typename Shape::InputVector mean_u = policy.gain[k] * x + policy.offset[k];
      const typename Shape::InputVector u = mean_u + draw(policy_fac[k], rng);
      const double scale = 1.0 + mean_u.norm() + prior.mean[k].norm();
      const double stage = 0.5 * u.dot(spec.input_cost[k] * u) +
                           spec.epsilon * stage_kl[k]((mean_u - prior.mean[k]).eval(), scale);
      cost += stage;
      x = (spec.dynamics[k] * x + spec.input_map[k] * u + draw(noise_fac[k], rng)).eval();
      if (keep_trajectories) {
        traj.inputs.push_back(u);
        traj.stage_costs.push_back(stage);
        traj.states.push_back(x);
      }
    }
    const double terminal = 0.5 * x.dot(spec.terminal_cost * x);
    cost += terminal;
    out.costs.push_back(cost);
    if (keep_trajectories) {
      traj.terminal_cost = terminal;
      out.trajectories.push_back(std::move(traj));
    }
  }

  double sum = 0.0;
  for (double c : out.costs) sum += c;
  out.mean_cost = sum / static_cast<double>(n_traj);
  if (n_traj < 2) {
    out.std_error = std::numeric_limits<double>::infinity();
  } else {
    double ss = 0.0;
    for (double c : out.costs) ss += (c - out.mean_cost) * (c - out.mean_cost);
    out.std_error = std::sqrt(ss / static_cast<double>(n_traj - 1) / static_cast<double>(n_traj));
  }
  return out;
}

}  // namespace miocp
