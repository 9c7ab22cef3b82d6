#pragma once

// Symmetric / positive semidefinite matrix utilities.
//
// Every routine accepts fixed-size or dynamic square Eigen matrices and
// returns the matching plain type, so the solver code above it can be
// instantiated on compile-time dimensions without heap traffic.

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <type_traits>

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/Eigenvalues>
#include <Eigen/LU>

#include "miocp/errors.hpp"

namespace miocp {

/// Relative eigenvalue clamp: tol = kRelativeEigTol * (1 + max |lambda|).
inline constexpr double kRelativeEigTol = 1e-10;

/// Symmetry check threshold: max |M_ij - M_ji| <= kSymmetryTol * (1 + max |M_ij|).
inline constexpr double kSymmetryTol = 1e-12;

/// Reciprocal condition number below which a PD solve is refused.
inline constexpr double kMinRcond = 1e-14;

template <typename Mat>
using EigVector = Eigen::Matrix<double, Mat::RowsAtCompileTime, 1, 0, Mat::MaxRowsAtCompileTime, 1>;

/// Tall factor with a runtime column count bounded by the row count.
template <typename Mat>
using FactorMatrix = Eigen::Matrix<double, Mat::RowsAtCompileTime, Eigen::Dynamic, 0,
                                   Mat::MaxRowsAtCompileTime, Mat::MaxRowsAtCompileTime>;

template <typename Mat>
struct SymEig {
  EigVector<Mat> values;  // descending
  Mat basis;              // orthonormal columns, basis.col(i) pairs with values(i)
};

/// factor * factor^T reproduces the source; factor has full column rank.
template <typename Mat>
struct PsdFactor {
  FactorMatrix<Mat> factor;
  Eigen::Index rank = 0;
};

namespace detail {

template <typename Derived>
void require_symmetric(const Eigen::MatrixBase<Derived>& M, const char* what = "matrix") {
  if (M.rows() != M.cols()) {
    throw Error(ErrorCode::NotSymmetric,
                std::string(what) + " is not square (" + std::to_string(M.rows()) + "x" +
                    std::to_string(M.cols()) + ")");
  }
  if (M.size() == 0) return;
  if (!M.allFinite()) throw Error(ErrorCode::NotSymmetric, std::string(what) + " has non-finite entries");
  if constexpr (Derived::RowsAtCompileTime == 1) return;
  const double scale = M.cwiseAbs().maxCoeff();
  const double skew = (M - M.transpose()).cwiseAbs().maxCoeff();
  if (skew > kSymmetryTol * (1.0 + scale)) {
    throw Error(ErrorCode::NotSymmetric, std::string(what) + " asymmetry " + std::to_string(skew));
  }
}

template <typename Values>
double resolve_tol(const Values& values, std::optional<double> tol) {
  if (tol) return *tol;
  const double largest = values.size() == 0 ? 0.0 : values.cwiseAbs().maxCoeff();
  return kRelativeEigTol * (1.0 + largest);
}

template <typename Derived>
typename Derived::PlainObject identity_like(const Eigen::MatrixBase<Derived>& M) {
  return Derived::PlainObject::Identity(M.rows(), M.cols());
}

}  // namespace detail

template <typename Derived>
typename Derived::PlainObject symmetrize(const Eigen::MatrixBase<Derived>& M) {
  return 0.5 * (M + M.transpose());
}

/// Eigendecomposition of a symmetric matrix, eigenvalues sorted descending.
template <typename Derived>
SymEig<typename Derived::PlainObject> sym_eig(const Eigen::MatrixBase<Derived>& M) {
  using Mat = typename Derived::PlainObject;
  detail::require_symmetric(M);
  SymEig<Mat> out;
  if (M.size() == 0) {
    out.values.resize(0);
    out.basis.resize(0, 0);
    return out;
  }
  if constexpr (Mat::RowsAtCompileTime == 1) {
    // scalar case sits in the innermost loop of the 1x1 solves
    out.values.setConstant(1, M(0, 0));
    out.basis.setOnes(1, 1);
    return out;
  }
  Eigen::SelfAdjointEigenSolver<Mat> solver(M.eval());
  if (solver.info() != Eigen::Success) {
    throw Error(ErrorCode::IllConditioned, "symmetric eigensolver did not converge");
  }
  out.values = solver.eigenvalues().reverse();
  out.basis = solver.eigenvectors().rowwise().reverse();
  return out;
}

template <typename Derived>
double min_eig(const Eigen::MatrixBase<Derived>& M) {
  using Mat = typename Derived::PlainObject;
  detail::require_symmetric(M);
  if (M.size() == 0) return 0.0;
  if constexpr (Mat::RowsAtCompileTime == 1) return M(0, 0);
  Eigen::SelfAdjointEigenSolver<Mat> solver(M.eval(), Eigen::EigenvaluesOnly);
  return solver.eigenvalues()(0);
}

template <typename Derived>
double max_eig(const Eigen::MatrixBase<Derived>& M) {
  using Mat = typename Derived::PlainObject;
  detail::require_symmetric(M);
  if (M.size() == 0) return 0.0;
  if constexpr (Mat::RowsAtCompileTime == 1) return M(0, 0);
  Eigen::SelfAdjointEigenSolver<Mat> solver(M.eval(), Eigen::EigenvaluesOnly);
  return solver.eigenvalues()(M.rows() - 1);
}

template <typename Derived>
bool is_pd(const Eigen::MatrixBase<Derived>& M, double tol = 0.0) {
  return min_eig(M) > tol;
}

template <typename Derived>
bool is_psd(const Eigen::MatrixBase<Derived>& M, double tol = 0.0) {
  return min_eig(M) >= -tol;
}

namespace detail {

template <typename Mat>
Mat root_from_eig(const SymEig<Mat>& eig, double t) {
  if (eig.values.size() > 0 && eig.values(eig.values.size() - 1) < -t) {
    throw Error(ErrorCode::NotPsd, "eigenvalue " + std::to_string(eig.values(eig.values.size() - 1)));
  }
  if constexpr (Mat::RowsAtCompileTime == 1) {
    return Mat::Constant(eig.values(0) > t ? std::sqrt(eig.values(0)) : 0.0);
  }
  auto roots = eig.values;
  for (Eigen::Index i = 0; i < roots.size(); ++i) roots(i) = roots(i) > t ? std::sqrt(roots(i)) : 0.0;
  Mat out = eig.basis * roots.asDiagonal() * eig.basis.transpose();
  return symmetrize(out);
}

}  // namespace detail

/// Unique symmetric PSD square root. Eigenvalues in [-tol, tol] are treated as zero.
namespace detail {

[[noreturn]] [[gnu::cold]] [[gnu::noinline]] inline void throw_bad_scalar(double v) {
  if (!std::isfinite(v)) throw Error(ErrorCode::NotSymmetric, "matrix has non-finite entries");
  throw Error(ErrorCode::NotPsd, "eigenvalue " + std::to_string(v));
}

inline double checked_sqrt(double v, double t) {
  if (!std::isfinite(v) || v < -t) throw_bad_scalar(v);
  return v > t ? std::sqrt(v) : 0.0;
}

template <typename Derived>
typename Derived::PlainObject scalar_root(const Eigen::MatrixBase<Derived>& M, double t) {
  return Derived::PlainObject::Constant(checked_sqrt(M(0, 0), t));
}

}  // namespace detail

template <typename Derived>
typename Derived::PlainObject psd_sqrt(const Eigen::MatrixBase<Derived>& M,
                                       std::optional<double> tol = std::nullopt) {
  if constexpr (Derived::RowsAtCompileTime == 1 && Derived::ColsAtCompileTime == 1) {
    return detail::scalar_root(M, tol ? *tol : kRelativeEigTol * (1.0 + std::abs(M(0, 0))));
  }
  const auto eig = sym_eig(M);
  return detail::root_from_eig(eig, detail::resolve_tol(eig.values, tol));
}

/// psd_sqrt with a purely relative clamp, kRelativeEigTol * max |lambda|.
/// Used on prior covariances, whose eigenvalues may legitimately be tiny
/// but must not be rounded to zero (that would change their image).
template <typename Derived>
typename Derived::PlainObject psd_sqrt_scale_free(const Eigen::MatrixBase<Derived>& M) {
  if constexpr (Derived::RowsAtCompileTime == 1 && Derived::ColsAtCompileTime == 1) {
    return detail::scalar_root(M, kRelativeEigTol * std::abs(M(0, 0)));
  }
  const auto eig = sym_eig(M);
  const double largest = eig.values.size() == 0 ? 0.0 : eig.values.cwiseAbs().maxCoeff();
  return detail::root_from_eig(eig, kRelativeEigTol * largest);
}

/// Rank-revealing factor. A zero matrix yields rank 0 and an empty-width factor.
template <typename Derived>
PsdFactor<typename Derived::PlainObject> psd_factor(const Eigen::MatrixBase<Derived>& M,
                                                    std::optional<double> tol = std::nullopt) {
  using Mat = typename Derived::PlainObject;
  const auto eig = sym_eig(M);
  const double t = detail::resolve_tol(eig.values, tol);
  if (eig.values.size() > 0 && eig.values(eig.values.size() - 1) < -t) {
    throw Error(ErrorCode::NotPsd, "eigenvalue " + std::to_string(eig.values(eig.values.size() - 1)));
  }
  PsdFactor<Mat> out;
  while (out.rank < eig.values.size() && eig.values(out.rank) > t) ++out.rank;
  out.factor.resize(M.rows(), out.rank);
  for (Eigen::Index j = 0; j < out.rank; ++j) out.factor.col(j) = eig.basis.col(j) * std::sqrt(eig.values(j));
  return out;
}

/// Moore-Penrose inverse of a symmetric matrix; |lambda| <= tol maps to zero.
template <typename Derived>
typename Derived::PlainObject pinv(const Eigen::MatrixBase<Derived>& M, std::optional<double> tol = std::nullopt) {
  const auto eig = sym_eig(M);
  const double t = detail::resolve_tol(eig.values, tol);
  auto inv = eig.values;
  for (Eigen::Index i = 0; i < inv.size(); ++i) inv(i) = std::abs(inv(i)) > t ? 1.0 / inv(i) : 0.0;
  typename Derived::PlainObject out = eig.basis * inv.asDiagonal() * eig.basis.transpose();
  return symmetrize(out);
}

/// Cholesky factorization of a PD matrix. The 1x1 case bypasses Eigen's
/// blocked kernel, which dominates the cost of scalar problems.
template <typename Mat>
class PdSolver {
 public:
  PdSolver() = default;
  explicit PdSolver(const Mat& M) {
    if constexpr (kScalar) {
      value_ = M(0, 0);
      ok_ = value_ > 0.0 && std::isfinite(value_);
    } else {
      llt_.compute(M);
      ok_ = llt_.info() == Eigen::Success;
    }
  }

  bool ok() const { return ok_; }

  double rcond() const {
    if constexpr (kScalar) return 1.0;
    else return llt_.rcond();
  }

  template <typename Rhs>
  typename Rhs::PlainObject solve(const Eigen::MatrixBase<Rhs>& b) const {
    if constexpr (kScalar) return b / value_;
    else return llt_.solve(b);
  }

  double logdet() const {
    if constexpr (kScalar) return std::log(value_);
    else return 2.0 * llt_.matrixLLT().diagonal().array().log().sum();
  }

 private:
  static constexpr bool kScalar = Mat::RowsAtCompileTime == 1;
  struct Unused {};
  std::conditional_t<kScalar, Unused, Eigen::LLT<Mat>> llt_;
  double value_ = 0.0;
  bool ok_ = false;
};

namespace detail {

// Kept out of line so the hot factorization path stays small.
[[noreturn]] [[gnu::cold]] [[gnu::noinline]] inline void throw_ill_conditioned(double rcond, const char* what,
                                                                              std::optional<std::size_t> stage) {
  if (rcond < 0.0) throw Error(ErrorCode::IllConditioned, "Cholesky failed", what, stage);
  throw Error(ErrorCode::IllConditioned, "reciprocal condition estimate " + std::to_string(rcond), what, stage);
}

}  // namespace detail

/// Cholesky of a PD matrix with a conditioning guard. `stage` is reported in errors.
template <typename Derived>
PdSolver<typename Derived::PlainObject> pd_factorize(const Eigen::MatrixBase<Derived>& M, const char* what,
                                                     std::optional<std::size_t> stage = std::nullopt) {
  PdSolver<typename Derived::PlainObject> llt(M.eval());
  if (!llt.ok()) detail::throw_ill_conditioned(-1.0, what, stage);
  if (M.size() > 0) {
    const double rcond = llt.rcond();
    if (!(rcond > kMinRcond)) detail::throw_ill_conditioned(rcond, what, stage);
  }
  return llt;
}

/// Inverse of a PD matrix through its Cholesky factor (result symmetrized).
template <typename Derived>
typename Derived::PlainObject pd_inverse(const Eigen::MatrixBase<Derived>& M, const char* what,
                                         std::optional<std::size_t> stage = std::nullopt) {
  const auto llt = pd_factorize(M, what, stage);
  typename Derived::PlainObject out = llt.solve(detail::identity_like(M));
  return symmetrize(out);
}

/// log det of a PD matrix.
template <typename Derived>
double pd_logdet(const Eigen::MatrixBase<Derived>& M, const char* what = "matrix") {
  return pd_factorize(M, what).logdet();
}

}  // namespace miocp
