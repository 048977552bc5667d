#pragma once

#include "hetlab/common.hpp"
#include "hetlab/lanczos.hpp"
#include "hetlab/operator.hpp"
#include "hetlab/spectra.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace hetlab {

struct ProbeConfig {
  int num_probes = 10;
  Index steps = 100;
  ProbeDistribution distribution = ProbeDistribution::Gaussian;
  std::uint64_t seed = 0;
  bool reorthogonalize = true;
  unsigned workers = 1;

  void validate() const {
    if (num_probes < 1) throw InputError("probe config: num_probes must be at least 1");
    if (steps < 1) throw InputError("probe config: Lanczos steps must be at least 1");
  }
};

/// Gauss rule of a Jacobi matrix: nodes are its eigenvalues, weights the squared first
/// components of the orthonormal eigenvectors.
template <typename Scalar>
QuadratureRule quadrature_from_tridiagonal(const Tridiagonal<Scalar>& t) {
  const Index m = t.size();
  if (m == 0) throw InputError("quadrature_from_tridiagonal: empty matrix");
  if (t.beta.size() != m - 1) throw InputError("quadrature_from_tridiagonal: beta must have m-1 entries");
  QuadratureRule rule;
  if (m == 1) {
    rule.nodes = Eigen::VectorXd::Constant(1, static_cast<double>(t.alpha[0]));
    rule.weights = Eigen::VectorXd::Ones(1);
    return rule;
  }
  Eigen::SelfAdjointEigenSolver<MatrixX<Scalar>> es;
  VectorX<Scalar> diag = t.alpha, sub = t.beta;
  es.computeFromTridiagonal(diag, sub, Eigen::ComputeEigenvectors);
  if (es.info() != Eigen::Success) es.compute(t.to_dense(), Eigen::ComputeEigenvectors);
  if (es.info() != Eigen::Success)
    throw NumericalError("quadrature_from_tridiagonal: eigensolver failed on a degenerate Jacobi matrix");
  rule.nodes = es.eigenvalues().template cast<double>();
  rule.weights = es.eigenvectors().row(0).transpose().cwiseAbs2().template cast<double>();
  return rule;
}

inline double estimate_quadratic_form(const QuadratureRule& rule, const std::function<double(double)>& f) {
  double s = 0.0;
  for (Index j = 0; j < rule.size(); ++j) s += rule.weights[j] * f(rule.nodes[j]);
  return s;
}

/// Unit-norm probe for probe index i, drawn from its own derived stream.
template <typename Scalar>
VectorX<Scalar> draw_probe(Index dim, const ProbeConfig& cfg, std::uint64_t probe_seed) {
  Rng rng(probe_seed);
  VectorX<Scalar> u = cfg.distribution == ProbeDistribution::Gaussian ? gaussian_vector<Scalar>(dim, rng)
                                                                      : rademacher_vector<Scalar>(dim, rng);
  return u / u.norm();
}

inline std::uint64_t probe_seed(std::uint64_t seed, int probe) {
  return derive_seed(seed, "slq-probe", static_cast<std::uint64_t>(probe));
}

/// Hutchinson estimate (1/n_v) sum_i d * v_i^T A v_i with normalized probes.
template <typename Scalar>
double estimate_trace(const SymmetricOperator<Scalar>& op, const ProbeConfig& cfg) {
  cfg.validate();
  std::vector<double> terms(static_cast<std::size_t>(cfg.num_probes));
  parallel_for(terms.size(), cfg.workers, [&](std::size_t i) {
    VectorX<Scalar> v = draw_probe<Scalar>(op.dim(), cfg, probe_seed(cfg.seed, static_cast<int>(i)));
    terms[i] = static_cast<double>(op.dim()) * static_cast<double>(v.dot(op.apply(v)));
  });
  return std::accumulate(terms.begin(), terms.end(), 0.0) / cfg.num_probes;
}

/// Per-probe quadrature rules without any blur applied. Lanczos runs min(steps, dim) steps and
/// stops at an invariant subspace, where the rule is already exact for the probe's measure.
template <typename Scalar>
SpectralDensity slq_rules(const SymmetricOperator<Scalar>& op, const ProbeConfig& cfg, std::string label = {}) {
  cfg.validate();
  const auto n = static_cast<std::size_t>(cfg.num_probes);
  SpectralDensity out;
  out.label = std::move(label);
  out.rules.resize(n);
  DensityProvenance prov;
  prov.steps = cfg.steps;
  prov.num_probes = cfg.num_probes;
  prov.seed = cfg.seed;
  prov.distribution = cfg.distribution;
  prov.reorthogonalize = cfg.reorthogonalize;
  prov.probe_seeds.resize(n);
  prov.effective_steps.resize(n);
  const Index m = std::min(cfg.steps, op.dim());
  parallel_for(n, cfg.workers, [&](std::size_t i) {
    const std::uint64_t s = probe_seed(cfg.seed, static_cast<int>(i));
    VectorX<Scalar> v = draw_probe<Scalar>(op.dim(), cfg, s);
    LanczosOptions lo;
    lo.reorthogonalize = cfg.reorthogonalize;
    lo.on_breakdown = BreakdownPolicy::Stop;
    lo.restart_seed = s;
    auto res = lanczos(op, v, m, lo);
    out.rules[i] = quadrature_from_tridiagonal(res.tridiagonal);
    prov.probe_seeds[i] = s;
    prov.effective_steps[i] = res.steps;
  });
  out.provenance = std::move(prov);
  return out;
}

/// Blurred SLQ spectral density. sigma <= 0 is rejected; std::nullopt selects default_sigma.
template <typename Scalar>
SpectralDensity slq_density(const SymmetricOperator<Scalar>& op, const ProbeConfig& cfg,
                            std::optional<double> sigma = std::nullopt, std::string label = {}) {
  if (sigma && !(*sigma > 0.0)) throw InputError("slq_density: sigma must be positive");
  SpectralDensity d = slq_rules(op, cfg, std::move(label));
  d.sigma = sigma ? *sigma : default_sigma(d.rules);
  return d;
}

struct BlockDensity {
  std::size_t block = 0;  // 0-based
  SpectralDensity density;
};

/// Uniform sample of ceil(fraction * L) blocks without replacement, in increasing block order.
inline std::vector<std::size_t> sample_blocks(std::size_t num_blocks, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw InputError("block fraction must lie in (0, 1]");
  const auto k = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(num_blocks) - 1e-12));
  std::vector<std::size_t> idx(num_blocks);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(derive_seed(seed, "block-sample"));
  for (std::size_t i = 0; i < k; ++i) {  // partial Fisher-Yates
    std::uniform_int_distribution<std::size_t> pick(i, num_blocks - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

struct SimplifiedConfig {
  double block_fraction = 0.5;
  int num_probes = 1;
  Index steps = 10;
  ProbeDistribution distribution = ProbeDistribution::Gaussian;
  std::uint64_t seed = 0;
  bool reorthogonalize = true;
  // Minibatch size for the Hessian. Deterministic operators ignore it.
  int batch_size = 32;
};

/// Per-block densities for a random subset of blocks with the reduced probe budget. Each block
/// draws fresh probes from a seed derived from (seed, block).
template <typename Scalar>
std::vector<BlockDensity> slq_simplified(const SymmetricOperator<Scalar>& op, const BlockPartition& part,
                                         const SimplifiedConfig& cfg) {
  std::vector<BlockDensity> out;
  for (std::size_t l : sample_blocks(part.num_blocks(), cfg.block_fraction, cfg.seed)) {
    ProbeConfig pc;
    pc.num_probes = cfg.num_probes;
    pc.steps = cfg.steps;
    pc.distribution = cfg.distribution;
    pc.seed = derive_seed(cfg.seed, "simplified-block", l);
    pc.reorthogonalize = cfg.reorthogonalize;
    out.push_back({l, slq_density(block_restrict(op, part, l), pc, std::nullopt, "block " + std::to_string(l + 1))});
  }
  return out;
}

/// Full-budget densities for every block of a partition, fresh probes per block.
template <typename Scalar>
std::vector<SpectralDensity> blockwise_densities(const SymmetricOperator<Scalar>& op, const BlockPartition& part,
                                                 const ProbeConfig& cfg,
                                                 const std::vector<std::string>& labels = {}) {
  std::vector<SpectralDensity> out;
  for (std::size_t l = 0; l < part.num_blocks(); ++l) {
    ProbeConfig pc = cfg;
    pc.seed = derive_seed(cfg.seed, "block", l);
    std::string label = l < labels.size() ? labels[l] : "block " + std::to_string(l + 1);
    out.push_back(slq_density(block_restrict(op, part, l), pc, std::nullopt, std::move(label)));
  }
  return out;
}

}  // namespace hetlab
