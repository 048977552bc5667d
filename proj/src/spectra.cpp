#include "hetlab/spectra.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace hetlab {

std::string to_string(ProbeDistribution d) {
  return d == ProbeDistribution::Gaussian ? "gaussian" : "rademacher";
}

ProbeDistribution probe_distribution_from_string(const std::string& s) {
  if (s == "gaussian") return ProbeDistribution::Gaussian;
  if (s == "rademacher") return ProbeDistribution::Rademacher;
  throw InputError("unknown probe distribution '" + s + "' (expected gaussian or rademacher)");
}

double SpectralDensity::min_node() const {
  double lo = std::numeric_limits<double>::infinity();
  for (const auto& r : rules)
    if (r.size() > 0) lo = std::min(lo, r.nodes.minCoeff());
  return lo;
}

double SpectralDensity::max_node() const {
  double hi = -std::numeric_limits<double>::infinity();
  for (const auto& r : rules)
    if (r.size() > 0) hi = std::max(hi, r.nodes.maxCoeff());
  return hi;
}

std::size_t SpectralDensity::node_count() const {
  std::size_t n = 0;
  for (const auto& r : rules) n += static_cast<std::size_t>(r.size());
  return n;
}

SpectralDensity SpectralDensity::with_sigma(double s) const {
  if (!(s > 0.0)) throw InputError("sigma must be positive");
  SpectralDensity out = *this;
  out.sigma = s;
  return out;
}

double default_sigma(const std::vector<QuadratureRule>& rules) {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (const auto& r : rules) {
    if (r.size() == 0) continue;
    lo = std::min(lo, r.nodes.minCoeff());
    hi = std::max(hi, r.nodes.maxCoeff());
  }
  if (!(hi >= lo)) throw InputError("default_sigma: no nodes");
  // Spreads at rounding level (the same eigenvalue seen by several probes) count as coincident.
  const double span = hi - lo;
  if (span > 1e-12 * std::max(1.0, std::max(std::abs(lo), std::abs(hi)))) return 0.01 * span;
  return 0.01 * std::max(1.0, std::abs(hi));
}

SpectralDensity exact_density(const Eigen::VectorXd& eigenvalues, double sigma, std::string label) {
  if (eigenvalues.size() == 0) throw InputError("exact_density: empty eigenvalue list");
  if (!(sigma > 0.0)) throw InputError("sigma must be positive");
  QuadratureRule r{eigenvalues, Eigen::VectorXd::Constant(eigenvalues.size(), 1.0 / eigenvalues.size())};
  SpectralDensity d;
  d.rules.push_back(std::move(r));
  d.sigma = sigma;
  d.label = std::move(label);
  return d;
}

double evaluate_density(const SpectralDensity& d, double t) {
  if (!(d.sigma > 0.0)) throw InputError("evaluate_density: sigma must be positive");
  if (d.rules.empty()) return 0.0;
  const double norm = 1.0 / (d.sigma * std::sqrt(2.0 * std::numbers::pi));
  double total = 0.0;
  for (const auto& r : d.rules) {
    double s = 0.0;
    for (Index j = 0; j < r.size(); ++j) {
      const double z = (t - r.nodes[j]) / d.sigma;
      s += r.weights[j] * std::exp(-0.5 * z * z);
    }
    total += s;
  }
  return norm * total / static_cast<double>(d.rules.size());
}

Eigen::VectorXd evaluate_density(const SpectralDensity& d, const Eigen::VectorXd& t) {
  Eigen::VectorXd out(t.size());
  for (Index i = 0; i < t.size(); ++i) out[i] = evaluate_density(d, t[i]);
  return out;
}

SpectralDensity normalize_axis(const SpectralDensity& d, int k) {
  if (k < 1) throw InputError("normalize_axis: k must be at least 1");
  std::vector<double> nodes;
  for (const auto& r : d.rules)
    for (Index j = 0; j < r.size(); ++j) nodes.push_back(r.nodes[j]);
  std::sort(nodes.begin(), nodes.end(), std::greater<>());
  double scale = 0.0;
  for (double x : nodes) scale = std::max(scale, std::abs(x));
  const double tol = 1e-6 * scale;
  std::vector<double> distinct;
  for (double x : nodes)
    if (distinct.empty() || distinct.back() - x > tol) distinct.push_back(x);
  if (static_cast<int>(distinct.size()) < k)
    throw InputError("normalize_axis: density has " + std::to_string(distinct.size()) +
                     " distinct nodes, fewer than k = " + std::to_string(k) + "; lower k");
  const double pivot = distinct[static_cast<std::size_t>(k - 1)];
  if (!(pivot > 0.0))
    throw InputError("normalize_axis: the k-th largest node is not positive; cannot rescale by it");
  SpectralDensity out = d;
  for (auto& r : out.rules) r.nodes /= pivot;
  out.sigma = d.sigma / pivot;
  return out;
}

GridSpec covering_grid(const std::vector<const SpectralDensity*>& ds, int points) {
  if (ds.empty()) throw InputError("covering_grid: no densities");
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (const auto* d : ds) {
    lo = std::min(lo, d->min_node() - 6.0 * d->sigma);
    hi = std::max(hi, d->max_node() + 6.0 * d->sigma);
  }
  if (!(hi > lo)) throw InputError("covering_grid: degenerate node range");
  return GridSpec{lo, hi, points};
}

GridSpec covering_grid(const SpectralDensity& a, const SpectralDensity& b, int points) {
  return covering_grid(std::vector<const SpectralDensity*>{&a, &b}, points);
}

namespace {

void check_grid(const GridSpec& g) {
  if (g.points < kMinGridPoints)
    throw InputError("grid needs at least " + std::to_string(kMinGridPoints) + " points");
  if (!(g.hi > g.lo)) throw InputError("grid range is empty");
}

void check_covers(const GridSpec& g, const SpectralDensity& d) {
  // Slack for the rounding in lo/hi arithmetic.
  const double slack = 1e-9 * std::max({1.0, std::abs(g.lo), std::abs(g.hi)});
  if (d.min_node() - 6.0 * d.sigma < g.lo - slack || d.max_node() + 6.0 * d.sigma > g.hi + slack)
    throw InputError("grid [" + std::to_string(g.lo) + ", " + std::to_string(g.hi) +
                     "] does not cover density '" + d.label + "' padded by 6 sigma");
}

// Standard normal CDF split so that upper tails keep their precision.
double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

double interval_mass(double a, double b) {
  if (a >= 0.0) return 0.5 * (std::erfc(a / std::numbers::sqrt2) - std::erfc(b / std::numbers::sqrt2));
  if (b <= 0.0) return normal_cdf(b) - normal_cdf(a);
  return 1.0 - normal_cdf(a) - 0.5 * std::erfc(b / std::numbers::sqrt2);
}

}  // namespace

Eigen::VectorXd discretize(const SpectralDensity& d, const GridSpec& grid) {
  check_grid(grid);
  if (!(d.sigma > 0.0)) throw InputError("discretize: sigma must be positive");
  const int n = grid.points;
  const double h = grid.step();
  const double inf = std::numeric_limits<double>::infinity();
  Eigen::VectorXd mass = Eigen::VectorXd::Zero(n);
  for (const auto& r : d.rules) {
    for (Index j = 0; j < r.size(); ++j) {
      const double w = r.weights[j];
      if (w == 0.0) continue;
      const double x = r.nodes[j];
      // Only cells within 40 sigma of the node carry representable mass.
      const double reach = 40.0 * d.sigma;
      const double top = n - 1;
      const int first = static_cast<int>(std::clamp(std::floor((x - reach - grid.lo) / h), 0.0, top));
      const int last = static_cast<int>(std::clamp(std::ceil((x + reach - grid.lo) / h), 0.0, top));
      for (int i = first; i <= last; ++i) {
        const double left = i == 0 ? -inf : grid.lo + (i - 0.5) * h;
        const double right = i == n - 1 ? inf : grid.lo + (i + 0.5) * h;
        mass[i] += w * interval_mass((left - x) / d.sigma, (right - x) / d.sigma);
      }
    }
  }
  const double total = mass.sum();
  if (!(total > 0.0)) throw NumericalError("discretize: density '" + d.label + "' has no mass on the grid");
  return mass / total;
}

double js_divergence(const Eigen::VectorXd& p_in, const Eigen::VectorXd& q_in) {
  if (p_in.size() != q_in.size()) throw InputError("js_divergence: length mismatch");
  const double sp = p_in.sum(), sq = q_in.sum();
  if (!(sp > 0.0) || !(sq > 0.0)) throw InputError("js_divergence: distributions must have positive mass");
  const Eigen::VectorXd p = p_in / sp;
  const Eigen::VectorXd q = q_in / sq;
  double kl_p = 0.0, kl_q = 0.0;
  for (Index i = 0; i < p.size(); ++i) {
    // p log(p/m) with m = (p+q)/2, written so that halving a subnormal cannot round m to zero.
    const double s = p[i] + q[i];
    if (p[i] > 0.0) kl_p += p[i] * std::log(2.0 * p[i] / s);
    if (q[i] > 0.0) kl_q += q[i] * std::log(2.0 * q[i] / s);
  }
  const double js = 0.5 * kl_p + 0.5 * kl_q;
  return std::clamp(js, 0.0, std::numbers::ln2);
}

double js_distance(const SpectralDensity& a, const SpectralDensity& b, const GridSpec& grid) {
  check_grid(grid);
  check_covers(grid, a);
  check_covers(grid, b);
  return js_divergence(discretize(a, grid), discretize(b, grid));
}

double js_distance(const SpectralDensity& a, const SpectralDensity& b, int points) {
  return js_distance(a, b, covering_grid(a, b, points));
}

namespace {

HeterogeneityReport make_report(const std::vector<SpectralDensity>& ds, auto&& distance) {
  if (ds.size() < 2) throw InputError("heterogeneity_report: need at least 2 densities");
  const auto n = static_cast<Index>(ds.size());
  HeterogeneityReport rep;
  rep.pairwise = Eigen::MatrixXd::Zero(n, n);
  double sum = 0.0;
  for (Index i = 0; i < n; ++i) {
    rep.labels.push_back(ds[static_cast<std::size_t>(i)].label);
    for (Index j = i + 1; j < n; ++j) {
      const double v = distance(ds[static_cast<std::size_t>(i)], ds[static_cast<std::size_t>(j)]);
      rep.pairwise(i, j) = rep.pairwise(j, i) = v;
      sum += v;
    }
  }
  rep.js0 = sum / static_cast<double>(n * (n - 1) / 2);
  return rep;
}

}  // namespace

HeterogeneityReport heterogeneity_report(const std::vector<SpectralDensity>& ds, int grid_points,
                                         bool normalize_10th) {
  std::vector<SpectralDensity> work = ds;
  if (normalize_10th)
    for (auto& d : work) d = normalize_axis(d, 10);
  auto rep = make_report(work, [&](const SpectralDensity& a, const SpectralDensity& b) {
    return js_distance(a, b, grid_points);
  });
  rep.grid_points = grid_points;
  rep.normalized = normalize_10th;
  return rep;
}

HeterogeneityReport heterogeneity_report(const std::vector<SpectralDensity>& ds, const GridSpec& grid) {
  auto rep = make_report(ds, [&](const SpectralDensity& a, const SpectralDensity& b) {
    return js_distance(a, b, grid);
  });
  rep.grid = grid;
  rep.grid_points = grid.points;
  return rep;
}

}  // namespace hetlab
