#pragma once

#include "hetlab/common.hpp"
#include "hetlab/operator.hpp"

#include <Eigen/Core>
#include <json.hpp>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace hetlab {

/// How H_l = Q Lambda Q^T is assembled. Orthogonal keeps Lambda as the exact spectrum; Gaussian
/// uses the raw Gaussian matrix for Q, so the spectrum of H_l drifts away from Lambda.
enum class QConstruction { Orthogonal, Gaussian };

QConstruction q_construction_from_string(const std::string& s);
std::string to_string(QConstruction q);

/// L(w) = 1/2 w^T H w - h^T w with block-diagonal H = diag(H_1, ..., H_L).
struct QuadraticProblem {
  std::vector<DenseSymmetric<double>> blocks;
  Eigen::MatrixXd hessian;  // assembled block-diagonal H
  Eigen::VectorXd h;
  BlockPartition partition;
  std::vector<Eigen::VectorXd> block_eigs;  // descending, computed from the assembled blocks
  double lambda_max = 0.0;
  double lambda_min = 0.0;
  double kappa = 0.0;
  std::vector<double> kappa_l;
  Eigen::VectorXd minimizer;

  Index dim() const { return hessian.rows(); }
  std::size_t num_blocks() const { return blocks.size(); }
  Eigen::VectorXd gradient(const Eigen::VectorXd& w) const;
  double loss(const Eigen::VectorXd& w) const;
  double optimal_loss() const;
  /// L(w) - L*, evaluated as 1/2 e^T H e with e = w - w* to avoid cancellation.
  double gap(const Eigen::VectorXd& w) const;
  SymmetricOperator<double> op() const;
};

/// Validates positive definiteness and fills eigendata, kappa and the minimizer.
QuadraticProblem problem_from_blocks(std::vector<DenseSymmetric<double>> blocks, Eigen::VectorXd h = {});

/// H_l = Q_l diag(spectra[l]) Q_l^T with Q_l from a seeded Gaussian matrix (QR for Orthogonal).
QuadraticProblem problem_from_spectra(const std::vector<Eigen::VectorXd>& spectra, std::uint64_t seed,
                                      QConstruction q = QConstruction::Orthogonal);

/// Block eigenvalue lists for Cases 3 and 4.
std::vector<Eigen::VectorXd> case_spectra(int which);

/// Like case_spectra, with every eigenvalue repeated `copies` times per block.
std::vector<Eigen::VectorXd> case_style_spectra(int which, int copies);

/// Directory holding the bundled surrogate spectra for Cases 1 and 2.
std::filesystem::path default_spectra_dir();

/// Cases 1 and 2: 25 eigenvalues per block sampled (seeded, without replacement) from four
/// surrogate lists, then one global affine map sends the sampled values onto [1, 5000].
std::vector<Eigen::VectorXd> sample_surrogate_spectra(const std::vector<Eigen::VectorXd>& sources,
                                                      Index per_block, std::uint64_t seed);

QuadraticProblem build_case(int which, std::uint64_t seed, QConstruction q = QConstruction::Orthogonal,
                            const std::filesystem::path& spectra_dir = default_spectra_dir());

/// Standard Gaussian initial point.
Eigen::VectorXd gaussian_init(Index dim, std::uint64_t seed);

struct TrajectoryRecord {
  long step = 0;
  double loss = 0.0;       // L(w^t)
  double gap = 0.0;        // L(w^t) - L*
  double rel_error = 0.0;  // gap / gap at t = 0
};

struct Trajectory {
  std::string optimizer;  // "gd" or "adam"
  double eta = 0.0;
  double beta2 = 1.0;
  std::vector<TrajectoryRecord> records;
  Eigen::VectorXd w0;
  Eigen::VectorXd final_w;
  Eigen::VectorXd final_v;  // Adam second moment used at the last step
  std::vector<Eigen::VectorXd> iterates;  // only with keep_iterates
  bool diverged = false;
  bool stopped_early = false;

  /// gap[t+1] / gap[t] for every recorded step with a positive gap.
  std::vector<double> step_ratios() const;
  /// First step whose relative error is <= eps.
  std::optional<long> iterations_to(double eps) const;
};

struct RunOptions {
  long steps = 1000;
  double stop_rel_error = 0.0;  // stop once rel_error <= this (0 = run all steps)
  bool keep_iterates = false;
  double divergence_factor = 1e12;
};

/// eta = 2 / (lambda_max + lambda_min).
double gd_auto_eta(const QuadraticProblem& p);

/// w <- w - eta (H w - h). std::nullopt selects gd_auto_eta.
Trajectory run_gd(const QuadraticProblem& p, std::optional<double> eta, const Eigen::VectorXd& w0,
                  const RunOptions& opts = {});

/// Adam with beta1 = 0 and eps = 0. beta2 = 1 keeps D = diag(|g^0|) fixed; beta2 < 1 maintains
/// v^0 = g^0 * g^0, v^t = beta2 v^{t-1} + (1 - beta2) g^t * g^t, D^t = diag(sqrt(v^t)).
Trajectory run_adam(const QuadraticProblem& p, double eta, double beta2, const Eigen::VectorXd& w0,
                    const RunOptions& opts = {});

struct RConstants {
  std::vector<double> c1;  // min_i |g_{l,i}| / lambda_{l,1}
  std::vector<double> c2;  // max_i |g_{l,i}| / lambda_{l,1}
  double r = 0.0;
  std::vector<double> kappa_adam;  // r * kappa_l
  double theorem_eta = 0.0;        // min_l c1
};

RConstants compute_r(const QuadraticProblem& p, const Eigen::VectorXd& w0);

/// Per block, kappa of D_l^{-1/2} H_l D_l^{-1/2} with D_l = diag(|g_l^0|).
std::vector<double> preconditioned_condition_numbers(const QuadraticProblem& p, const Eigen::VectorXd& w0);

struct TheoryReport {
  std::string check;  // "prop1", "thm1" or "prop2"
  double kappa = 0.0;
  std::vector<double> kappa_l;
  std::optional<RConstants> constants;
  double bound = 0.0;
  double worst_ratio = 0.0;
  double worst_slack = 0.0;  // signed margin of the worst step against the bound
  bool satisfied = false;
  nlohmann::json details = nlohmann::json::object();
  std::vector<std::string> notes;
};

/// Checks every per-step ratio against 1 - 2/(kappa+1). Also reports the squared bound
/// ((kappa-1)/(kappa+1))^2 that GD's loss ratio actually attains, and sqrt of the ratios.
TheoryReport verify_gd_lower_bound(const Trajectory& traj, double kappa);

/// Checks every per-step ratio against max_l (1 - 1/(r kappa_l)) and compares iteration counts.
TheoryReport verify_adam_upper_bound(const QuadraticProblem& p, const Eigen::VectorXd& w0, const Trajectory& traj,
                                     double eps = 1e-3);

struct LimitCycle {
  bool non_converged = false;
  double liminf_estimate = 0.0;
  double initial_loss = 0.0;
};

/// Minimum gap over the final 50% of steps; non-converged when it exceeds 1e-8 times the initial gap.
LimitCycle detect_limit_cycle(const Trajectory& traj);

TheoryReport limit_cycle_report(const Trajectory& traj);

/// {1, 3} x 10^e for e = -6..0, capped at 1.
std::vector<double> default_eta_grid();

struct MonteCarloStats {
  std::vector<double> r;
  std::vector<std::vector<double>> multipliers;  // per trial, kappa(D^-1 H_l) / kappa_l
  double fraction_r_at_most(double bound) const;
  std::vector<double> mean_multipliers() const;
};

/// Independent trials of (Q, w0) for one case, trial i seeded by derive_seed(seed, "mc-trial", i).
MonteCarloStats monte_carlo_case(int which, int trials, std::uint64_t seed, unsigned workers = 1,
                                 QConstruction q = QConstruction::Orthogonal);

nlohmann::json to_json(const RConstants& c);
nlohmann::json to_json(const TheoryReport& r);
std::string trajectory_csv(const Trajectory& t);

}  // namespace hetlab
