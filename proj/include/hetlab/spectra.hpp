#pragma once

#include "hetlab/common.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace hetlab {

/// Gauss quadrature rule for one probe: sum_j weights[j] f(nodes[j]) ~ v^T f(A) v.
struct QuadratureRule {
  Eigen::VectorXd nodes;
  Eigen::VectorXd weights;

  Index size() const { return nodes.size(); }
  double weight_sum() const { return weights.sum(); }
};

enum class ProbeDistribution { Gaussian, Rademacher };

std::string to_string(ProbeDistribution d);
ProbeDistribution probe_distribution_from_string(const std::string& s);

/// How a density was estimated. Carried along for export and reproducibility.
struct DensityProvenance {
  Index steps = 0;       // requested Lanczos steps
  int num_probes = 0;
  std::uint64_t seed = 0;
  ProbeDistribution distribution = ProbeDistribution::Gaussian;
  bool reorthogonalize = true;
  std::vector<std::uint64_t> probe_seeds;
  std::vector<Index> effective_steps;  // per probe
};

/// Probe-averaged Gaussian mixture over quadrature nodes. Rules are kept per probe so the blur
/// width can be changed without recomputing anything.
struct SpectralDensity {
  std::vector<QuadratureRule> rules;
  double sigma = 0.0;
  std::string label;
  std::optional<DensityProvenance> provenance;

  double min_node() const;
  double max_node() const;
  std::size_t node_count() const;
  SpectralDensity with_sigma(double s) const;
};

/// 0.01 * (max node - min node) over all rules. Falls back to 0.01 * max(1, |node|) when every
/// node coincides.
double default_sigma(const std::vector<QuadratureRule>& rules);

/// Density from an explicit eigenvalue list, each eigenvalue weighted 1/n.
SpectralDensity exact_density(const Eigen::VectorXd& eigenvalues, double sigma, std::string label = {});

double evaluate_density(const SpectralDensity& d, double t);
Eigen::VectorXd evaluate_density(const SpectralDensity& d, const Eigen::VectorXd& t);

/// Divides every node (and sigma) by the k-th largest distinct node. Nodes that agree to a relative
/// 1e-6 of the largest magnitude count once.
SpectralDensity normalize_axis(const SpectralDensity& d, int k = 10);

/// Uniform grid of `points` nodes on [lo, hi].
struct GridSpec {
  double lo = 0.0;
  double hi = 1.0;
  int points = 2048;

  double step() const { return (hi - lo) / (points - 1); }
  double at(int i) const { return lo + step() * i; }
};

inline constexpr int kDefaultGridPoints = 2048;
inline constexpr int kMinGridPoints = 256;

/// Union of node ranges padded by 6 sigma.
GridSpec covering_grid(const std::vector<const SpectralDensity*>& ds, int points = kDefaultGridPoints);
GridSpec covering_grid(const SpectralDensity& a, const SpectralDensity& b, int points = kDefaultGridPoints);

/// Probability mass of each grid cell under the density. Cell i spans the midpoints around
/// grid point i; the two end cells extend to infinity. Masses are renormalized to sum to 1.
Eigen::VectorXd discretize(const SpectralDensity& d, const GridSpec& grid);

/// Jensen-Shannon divergence (natural log) of two discrete distributions. Inputs are renormalized.
double js_divergence(const Eigen::VectorXd& p, const Eigen::VectorXd& q);

/// JS between two densities discretized on a shared grid. Result lies in [0, ln 2].
double js_distance(const SpectralDensity& a, const SpectralDensity& b, const GridSpec& grid);
double js_distance(const SpectralDensity& a, const SpectralDensity& b, int points = kDefaultGridPoints);

struct HeterogeneityReport {
  Eigen::MatrixXd pairwise;
  double js0 = 0.0;  // mean over the strictly upper triangle
  std::vector<std::string> labels;
  std::optional<GridSpec> grid;  // shared grid when one was given
  int grid_points = kDefaultGridPoints;
  bool normalized = false;
};

/// Pairwise JS matrix and its upper-triangle mean. Each pair is compared on its own covering grid.
HeterogeneityReport heterogeneity_report(const std::vector<SpectralDensity>& ds,
                                         int grid_points = kDefaultGridPoints, bool normalize_10th = false);
/// Same, on one shared grid that must cover every density.
HeterogeneityReport heterogeneity_report(const std::vector<SpectralDensity>& ds, const GridSpec& grid);

}  // namespace hetlab
