#include <doctest.h>

#include "hetlab/lanczos.hpp"
#include "hetlab/quadlab.hpp"

#include <Eigen/Eigenvalues>

using namespace hetlab;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

MatrixXd random_symmetric(Index n, std::uint64_t seed) {
  Rng rng(seed);
  MatrixXd a(n, n);
  for (Index j = 0; j < n; ++j) a.col(j) = gaussian_vector(n, rng);
  return (a + a.transpose()) * 0.5;
}

VectorXd unit_start(Index n, std::uint64_t seed) {
  Rng rng(seed);
  VectorXd v = gaussian_vector(n, rng);
  return v / v.norm();
}

VectorXd sorted(VectorXd v) {
  std::sort(v.data(), v.data() + v.size());
  return v;
}

}  // namespace

TEST_CASE("one step on a 1-D operator") {
  auto op = SymmetricOperator<double>::diagonal(VectorXd::Constant(1, 5.0));
  auto res = lanczos(op, VectorXd(VectorXd::Ones(1)), 1);
  CHECK(res.tridiagonal.alpha.size() == 1);
  CHECK(res.tridiagonal.alpha[0] == 5.0);
  CHECK(res.tridiagonal.beta.size() == 0);
}

TEST_CASE("e1 start on a tridiagonal matrix recovers its entries") {
  const Index n = 12;
  Rng rng(3);
  VectorXd a = gaussian_vector(n, rng), b = gaussian_vector(n - 1, rng);
  MatrixXd t = MatrixXd::Zero(n, n);
  t.diagonal() = a;
  for (Index k = 0; k + 1 < n; ++k) t(k, k + 1) = t(k + 1, k) = b[k];
  auto op = SymmetricOperator<double>::dense(DenseSymmetric<double>(t));
  auto res = lanczos(op, VectorXd(VectorXd::Unit(n, 0)), n);
  REQUIRE(res.steps == n);
  for (Index k = 0; k < n; ++k) CHECK(std::abs(res.tridiagonal.alpha[k] - a[k]) < 1e-10);
  for (Index k = 0; k + 1 < n; ++k) CHECK(std::abs(res.tridiagonal.beta[k] - std::abs(b[k])) < 1e-10);
}

TEST_CASE("full run on a 50x50 matrix reproduces its eigenvalues") {
  MatrixXd a = random_symmetric(50, 21);
  auto op = SymmetricOperator<double>::dense(DenseSymmetric<double>(a));
  auto res = lanczos(op, unit_start(50, 1), 50);
  VectorXd got = sorted(res.tridiagonal.eigenvalues());
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(a, Eigen::EigenvaluesOnly);
  CHECK((got - es.eigenvalues()).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("argument validation") {
  auto op = SymmetricOperator<double>::identity(3);
  CHECK_THROWS_AS(lanczos(op, VectorXd(VectorXd::Unit(3, 0)), 0), InputError);
  CHECK_THROWS_AS(lanczos(op, VectorXd(VectorXd::Unit(3, 0)), 4), InputError);
  CHECK_THROWS_AS(lanczos(op, VectorXd(VectorXd::Ones(3)), 2), InputError);
  CHECK_THROWS_AS(lanczos(op, VectorXd(VectorXd::Unit(2, 0)), 2), InputError);
}

TEST_CASE("breakdown: stop truncates, restart continues with a zero beta") {
  VectorXd d(4);
  d << 1, 2, 3, 4;
  auto op = SymmetricOperator<double>::diagonal(d);
  VectorXd v = VectorXd::Zero(4);
  v[0] = v[1] = std::sqrt(0.5);  // Krylov space has dimension 2

  LanczosOptions stop;
  stop.on_breakdown = BreakdownPolicy::Stop;
  auto s = lanczos(op, v, 4, stop);
  CHECK(s.truncated);
  CHECK(s.steps == 2);

  LanczosOptions restart;
  restart.keep_basis = true;
  auto r = lanczos(op, v, 4, restart);
  CHECK(r.steps == 4);
  CHECK(r.restarts == 1);
  CHECK(r.tridiagonal.beta[1] == 0.0);
  CHECK((sorted(r.tridiagonal.eigenvalues()) - d).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(((*r.basis).transpose() * (*r.basis) - MatrixXd::Identity(4, 4)).cwiseAbs().maxCoeff() < 1e-12);

  LanczosOptions no_store;
  no_store.reorthogonalize = false;
  CHECK(lanczos(op, v, 4, no_store).truncated);
}

// Kaniel-Paige bound on the distance of the extreme Ritz values after m steps from a start whose
// components along the eigenvectors of diag(eigs) are v.
RitzBounds kaniel_paige(const VectorXd& eigs, const VectorXd& v, Index m) {
  const Index n = eigs.size();
  const double spread = eigs[n - 1] - eigs[0];
  auto cheb = [](Index k, double x) { return std::cosh(static_cast<double>(k) * std::acosh(x)); };
  auto tan2 = [&](Index i) { return (1.0 - v[i] * v[i]) / (v[i] * v[i]); };
  const double g_top = (eigs[n - 1] - eigs[n - 2]) / (eigs[n - 2] - eigs[0]);
  const double g_bot = (eigs[1] - eigs[0]) / (eigs[n - 1] - eigs[1]);
  const double t_top = cheb(m - 1, 1.0 + 2.0 * g_top), t_bot = cheb(m - 1, 1.0 + 2.0 * g_bot);
  return {spread * tan2(n - 1) / (t_top * t_top), spread * tan2(0) / (t_bot * t_bot)};
}

TEST_CASE("extreme Ritz values on diag(1..100) respect the Kaniel-Paige bound") {
  VectorXd eigs = VectorXd::LinSpaced(100, 1.0, 100.0);
  auto diag = SymmetricOperator<double>::diagonal(eigs);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(derive_seed(seed, "extreme-ritz"));
    VectorXd v = gaussian_vector(100, rng);
    v.normalize();
    for (Index m : {30, 60, 100}) {
      auto rb = extreme_ritz(diag, m, seed);
      auto kp = kaniel_paige(eigs, v, m);
      CHECK(rb.lambda_max <= 100.0 + 1e-10);
      CHECK(rb.lambda_min >= 1.0 - 1e-10);
      CHECK(100.0 - rb.lambda_max <= kp.lambda_max + 1e-10);
      CHECK(rb.lambda_min - 1.0 <= kp.lambda_min + 1e-10);
    }
    auto full = extreme_ritz(diag, 100, seed);
    CHECK(std::abs(full.lambda_max - 100.0) / 100.0 < 1e-6);
    CHECK(std::abs(full.lambda_min - 1.0) < 1e-6);
  }
}

// Thirty steps cannot resolve both ends of an evenly spaced 100-point spectrum to 1e-6 from a
// generic start; the bound above is the attainable accuracy. Kept to document the gap.
TEST_CASE("extreme Ritz values on diag(1..100) at m = 30 within 1e-6 relative" * doctest::should_fail()) {
  auto rb = extreme_ritz(SymmetricOperator<double>::diagonal(VectorXd::LinSpaced(100, 1.0, 100.0)), 30, 0);
  CHECK(std::abs(rb.lambda_max - 100.0) / 100.0 < 1e-6);
  CHECK(std::abs(rb.lambda_min - 1.0) / 1.0 < 1e-6);
}

TEST_CASE("extreme Ritz values: identity, Case 3, validation") {
  auto id = extreme_ritz(SymmetricOperator<double>::identity(5), 5, 0);
  CHECK(id.lambda_max == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(id.lambda_min == doctest::Approx(1.0).epsilon(1e-14));

  QuadraticProblem p = build_case(3, 2);
  auto c3 = extreme_ritz(p.op(), 9, 5);
  CHECK(std::abs(c3.lambda_max - 5000.0) < 1e-8 * 5000.0);
  CHECK(std::abs(c3.lambda_min - 1.0) < 1e-8 * 5000.0);

  CHECK_THROWS_AS(extreme_ritz(SymmetricOperator<double>::identity(5), 1, 0), InputError);
}

TEST_CASE("property: reorthogonalized basis stays orthonormal") {
  for (Index n : {20, 60, 100}) {
    MatrixXd a = random_symmetric(n, static_cast<std::uint64_t>(n));
    auto op = SymmetricOperator<double>::dense(DenseSymmetric<double>(a));
    LanczosOptions o;
    o.keep_basis = true;
    auto res = lanczos(op, unit_start(n, 2), n, o);
    const MatrixXd& v = *res.basis;
    CHECK((v.transpose() * v - MatrixXd::Identity(v.cols(), v.cols())).cwiseAbs().maxCoeff() <= 1e-8);
  }
}

TEST_CASE("property: extreme Ritz values move outward monotonically in m") {
  const Index n = 40;
  MatrixXd a = random_symmetric(n, 77);
  auto op = SymmetricOperator<double>::dense(DenseSymmetric<double>(a));
  VectorXd v = unit_start(n, 8);
  double prev_max = -1e300, prev_min = 1e300;
  for (Index m = 2; m <= n; ++m) {
    VectorXd ev = lanczos(op, v, m).tridiagonal.eigenvalues();
    CHECK(ev.maxCoeff() >= prev_max - 1e-10);
    CHECK(ev.minCoeff() <= prev_min + 1e-10);
    prev_max = ev.maxCoeff();
    prev_min = ev.minCoeff();
  }
}

TEST_CASE("property: m = d with reorthogonalization recovers the spectrum") {
  for (Index n : {5, 17, 33, 64}) {
    MatrixXd a = random_symmetric(n, 1000 + static_cast<std::uint64_t>(n));
    auto op = SymmetricOperator<double>::dense(DenseSymmetric<double>(a));
    VectorXd got = sorted(lanczos(op, unit_start(n, 9), n).tridiagonal.eigenvalues());
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(a, Eigen::EigenvaluesOnly);
    CHECK((got - es.eigenvalues()).cwiseAbs().maxCoeff() <= 1e-8);
  }
}
