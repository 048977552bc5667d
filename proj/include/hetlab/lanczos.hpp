#pragma once

#include "hetlab/common.hpp"
#include "hetlab/operator.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>

namespace hetlab {

/// Symmetric tridiagonal (Jacobi) matrix: alpha on the diagonal, beta[k] couples k and k+1.
template <typename Scalar = double>
struct Tridiagonal {
  VectorX<Scalar> alpha;
  VectorX<Scalar> beta;  // size() - 1 entries, all >= 0

  Index size() const { return alpha.size(); }

  MatrixX<Scalar> to_dense() const {
    const Index m = size();
    MatrixX<Scalar> t = MatrixX<Scalar>::Zero(m, m);
    t.diagonal() = alpha;
    for (Index k = 0; k + 1 < m; ++k) t(k, k + 1) = t(k + 1, k) = beta[k];
    return t;
  }

  VectorX<Scalar> eigenvalues() const {
    if (size() == 1) return alpha;
    Eigen::SelfAdjointEigenSolver<MatrixX<Scalar>> es;
    VectorX<Scalar> diag = alpha, sub = beta;
    es.computeFromTridiagonal(diag, sub, Eigen::EigenvaluesOnly);
    if (es.info() == Eigen::Success) return es.eigenvalues();
    es.compute(to_dense(), Eigen::EigenvaluesOnly);  // Householder path as a fallback
    if (es.info() != Eigen::Success) throw NumericalError("tridiagonal eigensolver did not converge");
    return es.eigenvalues();
  }
};

/// What to do when beta_j falls below the breakdown tolerance.
enum class BreakdownPolicy {
  Restart,  // continue from a fresh random vector orthogonal to the basis (beta_j = 0)
  Stop,     // truncate T at the invariant subspace found so far
};

struct LanczosOptions {
  bool reorthogonalize = true;  // full, twice, against every stored basis vector
  bool keep_basis = false;      // return V; always stored internally when reorthogonalizing
  BreakdownPolicy on_breakdown = BreakdownPolicy::Restart;
  std::uint64_t restart_seed = 0;
  double breakdown_tol = 1e-12;  // relative to max(1, running max beta, running max |alpha|)
};

template <typename Scalar = double>
struct LanczosResult {
  Tridiagonal<Scalar> tridiagonal;
  std::optional<MatrixX<Scalar>> basis;
  Index requested_steps = 0;
  Index steps = 0;      // effective size of T
  int restarts = 0;     // breakdowns handled by the orthogonal-restart rule
  bool truncated = false;
};

namespace detail {

template <typename Scalar>
void orthogonalize_twice(VectorX<Scalar>& v, const MatrixX<Scalar>& basis, Index count) {
  if (count == 0) return;
  for (int pass = 0; pass < 2; ++pass) {
    VectorX<Scalar> coeffs = basis.leftCols(count).transpose() * v;
    v.noalias() -= basis.leftCols(count) * coeffs;
  }
}

}  // namespace detail

/// m steps of Lanczos tridiagonalization from the unit start vector v1.
///
/// Follows the three-term recurrence w_j = A v_j - alpha_j v_j - beta_j v_{j-1} with
/// beta_j = |w_{j-1}|. With reorthogonalization on, w_{j-1} is projected against every stored
/// basis vector twice before its norm is taken. A breakdown (beta_j tiny) either restarts from a
/// random vector orthogonal to the basis, which needs the stored basis, or truncates. Without a
/// stored basis a breakdown always truncates.
template <typename Scalar>
LanczosResult<Scalar> lanczos(const SymmetricOperator<Scalar>& op, const VectorX<Scalar>& v1, Index m,
                              const LanczosOptions& opts = {}) {
  using Vector = VectorX<Scalar>;
  const Index d = op.dim();
  if (m <= 0) throw InputError("lanczos: step count must be positive");
  if (m > d)
    throw InputError("lanczos: step count " + std::to_string(m) + " exceeds operator dimension " +
                     std::to_string(d));
  if (v1.size() != d) throw InputError("lanczos: start vector has wrong length");
  if (std::abs(static_cast<double>(v1.norm()) - 1.0) > 1e-12)
    throw InputError("lanczos: start vector must have unit norm");

  const bool store = opts.reorthogonalize || opts.keep_basis;
  MatrixX<Scalar> basis;
  if (store) {
    basis.resize(d, m);
    basis.col(0) = v1;
  }

  Vector alpha(m), beta(std::max<Index>(m - 1, 0));
  Vector v_prev = Vector::Zero(d);
  Vector v = v1;
  Vector w = op.apply(v);
  alpha[0] = w.dot(v);
  w -= alpha[0] * v;
  // Roundoff in w scales with |A|, which |alpha| tracks when the spectrum sits far from zero.
  double scale = std::max(1.0, std::abs(static_cast<double>(alpha[0])));

  LanczosResult<Scalar> res;
  res.requested_steps = m;
  Index steps = 1;
  Rng restart_rng(derive_seed(opts.restart_seed, "lanczos-restart"));

  for (Index j = 1; j < m; ++j) {
    if (opts.reorthogonalize) detail::orthogonalize_twice(w, basis, j);
    Scalar b = w.norm();
    Vector v_next;
    if (static_cast<double>(b) < opts.breakdown_tol * scale) {
      if (!store || opts.on_breakdown == BreakdownPolicy::Stop) {
        res.truncated = true;
        break;
      }
      v_next = gaussian_vector<Scalar>(d, restart_rng);
      detail::orthogonalize_twice(v_next, basis, j);
      Scalar n = v_next.norm();
      if (!(n > Scalar(1e-8))) {  // no room left orthogonal to the basis
        res.truncated = true;
        break;
      }
      v_next /= n;
      b = Scalar(0);
      ++res.restarts;
    } else {
      v_next = w / b;
      scale = std::max(scale, static_cast<double>(b));
    }
    if (store) basis.col(j) = v_next;
    beta[j - 1] = b;
    v_prev = std::move(v);
    v = std::move(v_next);
    w = op.apply(v);
    alpha[j] = w.dot(v);
    scale = std::max(scale, std::abs(static_cast<double>(alpha[j])));
    w -= alpha[j] * v + b * v_prev;
    steps = j + 1;
  }

  res.steps = steps;
  res.tridiagonal.alpha = alpha.head(steps);
  res.tridiagonal.beta = beta.head(std::max<Index>(steps - 1, 0));
  if (opts.keep_basis) res.basis = basis.leftCols(steps);
  return res;
}

struct RitzBounds {
  double lambda_max = 0.0;
  double lambda_min = 0.0;
};

/// Extreme Ritz values from a seeded random unit start, m clamped to the operator dimension.
template <typename Scalar>
RitzBounds extreme_ritz(const SymmetricOperator<Scalar>& op, Index m, std::uint64_t seed, bool reorth = true) {
  if (m < 2 && op.dim() >= 2) throw InputError("extreme_ritz: need at least 2 Lanczos steps");
  Rng rng(derive_seed(seed, "extreme-ritz"));
  VectorX<Scalar> v = gaussian_vector<Scalar>(op.dim(), rng);
  v.normalize();
  LanczosOptions opts;
  opts.reorthogonalize = reorth;
  opts.restart_seed = seed;
  auto res = lanczos(op, v, std::min(m, op.dim()), opts);
  VectorX<Scalar> ev = res.tridiagonal.eigenvalues();
  return {static_cast<double>(ev.maxCoeff()), static_cast<double>(ev.minCoeff())};
}

}  // namespace hetlab
