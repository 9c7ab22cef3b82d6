#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "miocp/fixed_point.hpp"
#include "test_helpers.hpp"

using namespace miocp;
using namespace miocp::testing;

namespace {

template <typename F>
ErrorCode code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no miocp::Error thrown";
  return ErrorCode::InvalidArgument;
}

GaussianPrior<1, 1> scalar_prior(double s) { return zero_mean_prior<1, 1>({scalar(s)}); }

// Closed form of the scalar reduced objective with sigma0 = 2, sigma_w = 0.1.
double scalar_objective_closed_form(double s, double eps) {
  return 0.5 * (2.0 * (1.0 - s / (eps + 2.0 * s)) + eps * std::log1p(2.0 * s / eps) + 0.1);
}

GaussianPrior<> random_pd_prior(Random& rng, const ProblemSpec<>& spec, double scale = 1.0) {
  std::vector<Mat> covs;
  for (std::size_t k = 0; k < spec.horizon; ++k) covs.push_back(rng.spd(spec.m(), 0.1 * scale, 2.0 * scale));
  return zero_mean_prior<Dynamic, Dynamic>(covs);
}

// Soft-min Bellman recursion with value functions 1/2 x'Pi x + s'x, PD priors only.
// Returns the optimal (gain, offset) per stage and the linear coefficients s_k.
struct AffineOracle {
  std::vector<Mat> gain;
  std::vector<Vec> offset;
  std::vector<Vec> linear;
  std::vector<Mat> cost_to_go;
};

AffineOracle affine_oracle(const ProblemSpec<>& spec, const GaussianPrior<>& prior) {
  const std::size_t T = spec.horizon;
  const double eps = spec.epsilon;
  AffineOracle o;
  o.gain.resize(T);
  o.offset.resize(T);
  o.linear.assign(T + 1, Vec::Zero(spec.n()));
  o.cost_to_go.resize(T + 1);
  o.cost_to_go[T] = spec.terminal_cost;
  for (std::size_t k = T; k-- > 0;) {
    const Mat& A = spec.dynamics[k];
    const Mat& B = spec.input_map[k];
    const Mat& Pi = o.cost_to_go[k + 1];
    const Mat prior_prec = prior.cov[k].inverse();
    const Mat Lambda = prior_prec + (spec.input_cost[k] + B.transpose() * Pi * B) / eps;
    const Mat Lambda_inv = Lambda.inverse();
    const Vec b0 = prior_prec * prior.mean[k] - B.transpose() * o.linear[k + 1] / eps;
    o.gain[k] = -Lambda_inv * B.transpose() * Pi * A / eps;
    o.offset[k] = Lambda_inv * b0;
    o.cost_to_go[k] = A.transpose() * Pi * A - A.transpose() * Pi * B * Lambda_inv * B.transpose() * Pi * A / eps;
    o.linear[k] = A.transpose() * o.linear[k + 1] + A.transpose() * Pi * B * Lambda_inv * b0;
  }
  return o;
}

}  // namespace

TEST(PolicyFromPrior, ScalarExample) {
  const auto step = policy_from_prior(scalar_spec(0.5), scalar_prior(0.25));
  EXPECT_NEAR(step.policy.cov[0](0, 0), 0.125, 1e-15);
  EXPECT_NEAR(step.policy.gain[0](0, 0), -0.25, 1e-15);
  EXPECT_EQ(step.policy.offset[0](0), 0.0);
  ASSERT_EQ(step.value_center.size(), 2u);
  EXPECT_EQ(step.value_center[0](0), 0.0);
  EXPECT_EQ(step.value_center[1](0), 0.0);
}

TEST(PolicyFromPrior, ZeroCovarianceStageIsDeterministicFeedforward) {
  auto spec = two_state_spec(0.3);
  auto prior = default_prior(spec);
  prior.cov[2] = scalar(0.0);
  prior.mean[2] = Eigen::Matrix<double, 1, 1>::Constant(0.7);
  const auto step = policy_from_prior(spec, prior);
  EXPECT_EQ(step.policy.cov[2](0, 0), 0.0);
  EXPECT_TRUE(step.policy.gain[2].isZero(0.0));
  EXPECT_NEAR(step.policy.offset[2](0), 0.7, 1e-15);
}

TEST(PolicyFromPrior, ReferenceSystemSatisfiesPolicyClass) {
  const auto spec = two_state_spec(10.0);
  const auto step = policy_from_prior(spec, default_prior(spec));
  EXPECT_NO_THROW(check_policy(spec, step.policy));
  EXPECT_TRUE(step.value_center.back().isZero(0.0));
}

TEST(PolicyFromPrior, NonzeroMeansNeedInvertibleDynamics) {
  auto spec = cast_spec<Dynamic, Dynamic>(two_state_spec(1.0));
  spec.dynamics[3] << 1, 1, 1, 1;
  auto prior = default_prior(spec);
  EXPECT_NO_THROW(policy_from_prior(spec, prior));  // zero means: no invertibility needed
  prior.mean[0](0) = 1.0;
  EXPECT_EQ(code_of([&] { policy_from_prior(spec, prior); }), ErrorCode::NonInvertibleA);
}

TEST(PolicyFromPrior, PropertyMatchesSoftBellmanOracle) {
  Random rng(31);
  for (int trial = 0; trial < 100; ++trial) {
    const auto spec = rng.spec_up_to(4, 3, 4);
    auto prior = random_pd_prior(rng, spec);
    for (auto& mu : prior.mean) mu = rng.gaussian(spec.m(), 1);
    const auto step = policy_from_prior(spec, prior);
    const auto oracle = affine_oracle(spec, prior);
    for (std::size_t k = 0; k < spec.horizon; ++k) {
      ASSERT_LE(rel_dist(step.policy.gain[k], oracle.gain[k]), 1e-8) << "trial " << trial;
      ASSERT_LE(rel_dist(step.policy.offset[k], oracle.offset[k]), 1e-7) << "trial " << trial;
      // value center r_k = -Pi_k^{-1} s_k
      const Vec r = -oracle.cost_to_go[k].inverse() * oracle.linear[k];
      ASSERT_LE(rel_dist(step.value_center[k], r), 1e-6) << "trial " << trial;
      ASSERT_LE(rel_dist(step.policy.cov[k], prior.cov[k] - prior.cov[k] * (prior.cov[k] +
                                                                          step.riccati.q_covariance[k]).inverse() *
                                                                                prior.cov[k]),
                1e-9);
    }
    EXPECT_TRUE(step.value_center.back().isZero(0.0));
  }
}

TEST(PolicyFromPrior, PropertyImageOfPolicyCovarianceFollowsPrior) {
  Random rng(32);
  for (int trial = 0; trial < 200; ++trial) {
    const auto spec = rng.spec_up_to(4, 4, 4);
    std::vector<Mat> covs;
    for (std::size_t k = 0; k < spec.horizon; ++k) {
      covs.push_back(rng.psd(spec.m(), rng.integer(0, static_cast<int>(spec.m())), rng.log_uniform(1e-2, 1e2)));
    }
    const auto prior = zero_mean_prior<Dynamic, Dynamic>(covs);
    const auto step = policy_from_prior(spec, prior);
    ASSERT_NO_THROW(check_policy(spec, step.policy));
    const auto mom = propagate_moments(spec, step.policy);
    const auto next = prior_from_policy(spec, step.policy, mom);
    for (std::size_t k = 0; k < spec.horizon; ++k) {
      const auto r_prior = psd_factor(covs[k], 1e-9 * std::max(1.0, covs[k].norm())).rank;
      ASSERT_EQ(psd_factor(step.policy.cov[k], 1e-9 * std::max(1.0, step.policy.cov[k].norm())).rank, r_prior);
      ASSERT_EQ(psd_factor(next.cov[k], 1e-9 * std::max(1.0, next.cov[k].norm())).rank, r_prior);
    }
  }
}

TEST(PropagateMoments, ZeroPolicyIsOpenLoop) {
  const auto spec = two_state_spec(1.0);
  GaussianPolicy<2, 1> zero;
  zero.gain.assign(spec.horizon, Eigen::Matrix<double, 1, 2>::Zero());
  zero.offset.assign(spec.horizon, Eigen::Matrix<double, 1, 1>::Zero());
  zero.cov.assign(spec.horizon, scalar(0.0));
  const auto mom = propagate_moments(spec, zero);
  Eigen::Matrix2d S = spec.initial_cov;
  for (std::size_t k = 0; k < spec.horizon; ++k) {
    S = spec.dynamics[k] * S * spec.dynamics[k].transpose() + spec.process_noise[k];
    EXPECT_LE(rel_dist(mom.cov[k + 1], S), 1e-15);
    EXPECT_TRUE(mom.mean[k + 1].isZero(0.0));
  }
}

TEST(PropagateMoments, ScalarExample) {
  const auto step = policy_from_prior(scalar_spec(0.5), scalar_prior(0.25));
  const auto mom = propagate_moments(scalar_spec(0.5), step.policy);
  EXPECT_EQ(mom.cov[0](0, 0), 2.0);
  EXPECT_NEAR(mom.cov[1](0, 0), 1.35, 1e-14);
  EXPECT_EQ(mom.mean[1](0), 0.0);
}

TEST(PriorFromPolicy, ScalarFixedPoint) {
  const auto spec = scalar_spec(0.5);
  const auto step = policy_from_prior(spec, scalar_prior(0.25));
  const auto next = prior_from_policy(spec, step.policy, propagate_moments(spec, step.policy));
  EXPECT_NEAR(next.cov[0](0, 0), 0.25, 1e-12);
  EXPECT_EQ(next.mean[0](0), 0.0);
}

TEST(PriorFromPolicy, ZeroGainReturnsPolicyNoise) {
  const auto spec = two_state_spec(1.0);
  GaussianPolicy<2, 1> pol;
  pol.gain.assign(spec.horizon, Eigen::Matrix<double, 1, 2>::Zero());
  pol.offset.assign(spec.horizon, Eigen::Matrix<double, 1, 1>::Constant(0.4));
  pol.cov.assign(spec.horizon, scalar(0.3));
  const auto prior = prior_from_policy(spec, pol, propagate_moments(spec, pol));
  for (std::size_t k = 0; k < spec.horizon; ++k) {
    EXPECT_NEAR(prior.mean[k](0), 0.4, 1e-15);
    EXPECT_NEAR(prior.cov[k](0, 0), 0.3, 1e-15);
  }
}

TEST(PriorFromPolicy, DeterministicFeedbackHasNonzeroPrior) {
  const auto spec = two_state_spec(1.0);
  GaussianPolicy<2, 1> pol;
  pol.gain.assign(spec.horizon, Eigen::Matrix<double, 1, 2>(0.5, -0.2));
  pol.offset.assign(spec.horizon, Eigen::Matrix<double, 1, 1>::Zero());
  pol.cov.assign(spec.horizon, scalar(0.0));
  const auto mom = propagate_moments(spec, pol);
  const auto prior = prior_from_policy(spec, pol, mom);
  for (std::size_t k = 0; k < spec.horizon; ++k) {
    const double want = (pol.gain[k] * mom.cov[k] * pol.gain[k].transpose())(0, 0);
    EXPECT_GT(prior.cov[k](0, 0), 0.0);
    EXPECT_NEAR(prior.cov[k](0, 0), want, 1e-12 * want);
  }
}

TEST(ObjectiveReduced, ScalarExamples) {
  EXPECT_NEAR(objective_reduced(scalar_spec(0.5), scalar_prior(0.0)), 1.05, 1e-14);
  EXPECT_NEAR(objective_reduced(scalar_spec(0.5), scalar_prior(0.25)), 0.5 * (1.5 + 0.5 * std::log(2.0) + 0.1), 1e-14);
  EXPECT_NEAR(objective_reduced(scalar_spec(0.5), scalar_prior(0.25)), 0.97329, 5e-6);
  for (double eps : {0.1, 0.5, 1.0, 3.0})
    for (double s : {0.0, 1e-8, 0.3, 2.0, 50.0})
      EXPECT_NEAR(objective_reduced(scalar_spec(eps), scalar_prior(s)), scalar_objective_closed_form(s, eps), 1e-13);
}

TEST(ObjectiveReduced, ScalarGridMinimizer) {
  for (double eps : {0.1, 0.5, 0.9}) {
    const auto spec = scalar_spec(eps);
    double best = 1e300, arg = -1.0;
    for (int i = 0; i <= 20000; ++i) {
      const double s = 1e-4 * i;
      const double J = objective_reduced(spec, scalar_prior(s));
      if (J < best) best = J, arg = s;
    }
    EXPECT_NEAR(arg, scalar_fixed_point(eps), 1e-4) << "eps " << eps;
  }
}

TEST(ObjectiveReduced, PropertyMatchesDeterminantOracle) {
  Random rng(33);
  for (int trial = 0; trial < 100; ++trial) {
    const auto spec = rng.spec_up_to(4, 3, 5);
    const auto prior = random_pd_prior(rng, spec);
    ASSERT_LE(rel_err(objective_reduced(spec, prior), objective_oracle(spec, prior.cov)), 1e-9);
  }
}

TEST(ObjectiveReduced, ContinuousAtRankDrop) {
  // The rank-deficient path (identity form) must agree with the PD limit.
  Random rng(34);
  for (int trial = 0; trial < 30; ++trial) {
    const auto spec = rng.spec(3, 3, 3, rng.log_uniform(0.1, 2.0));
    std::vector<Mat> covs, nudged;
    for (std::size_t k = 0; k < spec.horizon; ++k) {
      covs.push_back(rng.psd(3, 1));
      nudged.push_back(covs.back() + 1e-9 * Mat::Identity(3, 3));
    }
    const double exact = objective_reduced(spec, zero_mean_prior<Dynamic, Dynamic>(covs));
    const double near = objective_oracle(spec, nudged);
    ASSERT_LE(rel_err(exact, near), 1e-6);
  }
}

TEST(ObjectiveReduced, Coercive) {
  Random rng(35);
  for (int trial = 0; trial < 30; ++trial) {
    const auto spec = rng.spec_up_to(3, 3, 4);
    const auto base = random_pd_prior(rng, spec);
    const std::size_t k = static_cast<std::size_t>(rng.integer(0, static_cast<int>(spec.horizon) - 1));
    double previous = -1e300;
    for (double factor : {1e2, 1e4, 1e6}) {
      auto prior = base;
      prior.cov[k] *= factor;
      const double J = objective_reduced(spec, prior);
      ASSERT_GT(J, previous) << "trial " << trial << " factor " << factor;
      previous = J;
    }
  }
}

TEST(ObjectiveReduced, RejectsNonzeroMeans) {
  auto prior = scalar_prior(0.2);
  prior.mean[0](0) = 1.0;
  EXPECT_EQ(code_of([&] { objective_reduced(scalar_spec(0.5), prior); }), ErrorCode::InvalidArgument);
}

TEST(GradientReduced, ScalarExamples) {
  EXPECT_NEAR(gradient_reduced(scalar_spec(0.5), scalar_prior(0.25)).derivative[0](0, 0), 0.0, 1e-14);
  const auto g0 = gradient_reduced(scalar_spec(0.5), scalar_prior(0.0));
  EXPECT_NEAR(g0.derivative[0](0, 0), -1.0, 1e-14);
  EXPECT_NEAR(g0.feedback_map[0](0, 0), 0.5, 1e-15);
  EXPECT_NEAR(g0.total_precision[0](0, 0), 4.0, 1e-14);
}

TEST(GradientReduced, ScalarMatchesClosedFormDerivative) {
  for (double eps : {0.2, 0.5, 1.5})
    for (double s : {0.0, 0.1, 0.7, 3.0}) {
      const double want = eps / (eps + 2 * s) * (1.0 - 1.0 / (eps + 2 * s));
      EXPECT_NEAR(gradient_reduced(scalar_spec(eps), scalar_prior(s)).derivative[0](0, 0), want, 1e-12);
    }
}

TEST(GradientReduced, PropertyStructure) {
  Random rng(36);
  for (int trial = 0; trial < 100; ++trial) {
    const auto spec = rng.spec_up_to(4, 3, 4);
    const auto prior = random_pd_prior(rng, spec);
    const auto g = gradient_reduced(spec, prior);
    const auto ric = solve_riccati(spec, prior);
    for (std::size_t k = 0; k < spec.horizon; ++k) {
      const Mat I = Mat::Identity(spec.m(), spec.m());
      ASSERT_LE((g.total_precision[k] * (ric.q_covariance[k] + prior.cov[k]) - I).norm(), 1e-9);
      ASSERT_EQ(g.derivative[k], g.derivative[k].transpose());
      ASSERT_GT(min_eig(g.total_precision[k]), 0.0);
      const Mat ESE = g.feedback_map[k] * g.state_cov[k] * g.feedback_map[k].transpose();
      ASSERT_GE(min_eig(Mat(0.5 * (ESE + ESE.transpose()))), -1e-10 * std::max(1.0, ESE.norm()));
    }
  }
}

TEST(GradientReduced, PropertyFiniteDifferences) {
  Random rng(37);
  for (int trial = 0; trial < 50; ++trial) {
    const auto spec = rng.spec_up_to(3, 3, 4);
    const auto prior = random_pd_prior(rng, spec);
    std::vector<Mat> targets;
    for (std::size_t k = 0; k < spec.horizon; ++k) targets.push_back(rng.psd(spec.m()));
    const double analytic = directional_derivative(gradient_reduced(spec, prior), prior, targets);
    auto J_at = [&](double t) {
      std::vector<Mat> c;
      for (std::size_t k = 0; k < spec.horizon; ++k) c.push_back(prior.cov[k] + t * (targets[k] - prior.cov[k]));
      return objective_oracle(spec, c);
    };
    auto central = [&](double h) { return (J_at(h) - J_at(-h)) / (2 * h); };
    const double h = 1e-3;
    const double fd = (4 * central(h / 2) - central(h)) / 3;  // Richardson
    ASSERT_LE(std::abs(fd - analytic), 1e-5 * std::max(std::abs(analytic), 1e-3)) << "trial " << trial;
  }
}

TEST(Kl, IdenticalIsZero) {
  Eigen::Matrix2d S;
  S << 2, 0.5, 0.5, 1;
  const Gaussian p{Eigen::Vector2d(1, -1), S};
  EXPECT_NEAR(kl_gaussian(p, p), 0.0, 1e-15);
  const Gaussian z{Eigen::Vector2d(0.3, 0.3), Eigen::Matrix2d::Zero().eval()};
  EXPECT_EQ(kl_gaussian(z, z), 0.0);
}

TEST(Kl, OneDimensionalExampleAgainstQuadrature) {
  const Gaussian p{Eigen::Matrix<double, 1, 1>::Constant(0.0), scalar(1.0)};
  const Gaussian q{Eigen::Matrix<double, 1, 1>::Constant(1.0), scalar(2.0)};
  const double kl = kl_gaussian(p, q);
  EXPECT_NEAR(kl, 0.5 * std::log(2.0), 1e-12);
  // Trapezoid quadrature of int p log(p/q) on [-12, 12].
  auto logpdf = [](double x, double mu, double var) {
    return -0.5 * std::log(2 * std::numbers::pi * var) - 0.5 * (x - mu) * (x - mu) / var;
  };
  double sum = 0.0;
  const double h = 1e-3;
  for (double x = -12.0; x <= 12.0; x += h) {
    const double lp = logpdf(x, 0.0, 1.0);
    sum += std::exp(lp) * (lp - logpdf(x, 1.0, 2.0)) * h;
  }
  EXPECT_NEAR(kl, sum, 1e-8);
}

TEST(Kl, RankOneExample) {
  const Gaussian p{Eigen::Vector2d::Zero().eval(), Eigen::Matrix2d::Ones().eval()};
  const Gaussian q{Eigen::Vector2d::Zero().eval(), (2 * Eigen::Matrix2d::Ones()).eval()};
  EXPECT_NEAR(kl_gaussian(p, q), 0.5 * (std::log(2.0) + 0.5 - 1.0), 1e-12);
}

TEST(Kl, ImageMismatch) {
  const Eigen::Matrix2d e1 = Eigen::Vector2d(1, 0).asDiagonal();
  const Eigen::Matrix2d e2 = Eigen::Vector2d(0, 1).asDiagonal();
  const Eigen::Vector2d zero = Eigen::Vector2d::Zero();
  EXPECT_EQ(code_of([&] { kl_gaussian(Gaussian{zero, e1}, Gaussian{zero, e2}); }), ErrorCode::ImageMismatch);
  EXPECT_EQ(code_of([&] { kl_gaussian(Gaussian{zero, e1}, Gaussian{zero, Eigen::Matrix2d::Identity().eval()}); }),
            ErrorCode::ImageMismatch);
  EXPECT_EQ(code_of([&] { kl_gaussian(Gaussian{Eigen::Vector2d(0, 1), e1}, Gaussian{zero, e1}); }),
            ErrorCode::ImageMismatch);
  EXPECT_NO_THROW(kl_gaussian(Gaussian{Eigen::Vector2d(1, 0), e1}, Gaussian{zero, e1}));
}

TEST(Kl, PropertyNonnegativeAndMatchesFullRankFormula) {
  Random rng(38);
  for (int trial = 0; trial < 300; ++trial) {
    const auto n = rng.integer(1, 5);
    const Mat Sp = rng.spd(n, 0.1, 3.0), Sq = rng.spd(n, 0.1, 3.0);
    const Vec mp = rng.gaussian(n, 1), mq = rng.gaussian(n, 1);
    const double kl = kl_gaussian(Gaussian{mp, Sp}, Gaussian{mq, Sq});
    ASSERT_GE(kl, 0.0);
    ASSERT_LE(rel_err(kl, kl_full_rank(mp, Sp, mq, Sq)), 1e-9);
  }
}

TEST(Kl, PropertyDegenerateMatchesRestriction) {
  // KL between rank-r Gaussians on a shared image equals the full-rank KL of their coordinates.
  Random rng(39);
  for (int trial = 0; trial < 200; ++trial) {
    const auto n = rng.integer(2, 5);
    const auto r = rng.integer(1, n - 1);
    const Eigen::HouseholderQR<Mat> qr(rng.gaussian(n, r));
    const Mat U = Mat(qr.householderQ()).leftCols(r);
    const Mat Hp = rng.spd(r, 0.2, 2.0), Hq = rng.spd(r, 0.2, 2.0);
    const Vec cp = rng.gaussian(r, 1), cq = rng.gaussian(r, 1);
    const Mat Sp = U * Hp * U.transpose(), Sq = U * Hq * U.transpose();
    const double kl = kl_gaussian(Gaussian{Vec(U * cp), Mat(0.5 * (Sp + Sp.transpose()))},
                                  Gaussian{Vec(U * cq), Mat(0.5 * (Sq + Sq.transpose()))});
    ASSERT_LE(rel_err(kl, kl_full_rank(cp, Hp, cq, Hq)), 1e-8) << "trial " << trial;
  }
}
