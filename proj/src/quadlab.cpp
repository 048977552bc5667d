#include "hetlab/quadlab.hpp"

#include "hetlab/io.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstdlib>
#include <limits>
#include <numeric>

#ifndef HETLAB_SPECTRA_DIR
#define HETLAB_SPECTRA_DIR "data/spectra"
#endif

namespace hetlab {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using nlohmann::json;

QConstruction q_construction_from_string(const std::string& s) {
  if (s == "orthogonal") return QConstruction::Orthogonal;
  if (s == "gaussian") return QConstruction::Gaussian;
  throw InputError("unknown Q construction '" + s + "' (expected orthogonal or gaussian)");
}

std::string to_string(QConstruction q) { return q == QConstruction::Orthogonal ? "orthogonal" : "gaussian"; }

namespace {

// H w one block at a time; the off-diagonal zeros never enter a sum.
VectorXd apply_blocks(const QuadraticProblem& p, const VectorXd& w) {
  VectorXd out(w.size());
  for (std::size_t l = 0; l < p.blocks.size(); ++l) {
    const auto& r = p.partition.range(l);
    out.segment(r.start, r.size).noalias() = p.blocks[l].matrix() * w.segment(r.start, r.size);
  }
  return out;
}

}  // namespace

VectorXd QuadraticProblem::gradient(const VectorXd& w) const {
  if (w.size() != dim()) throw InputError("gradient: w has wrong length");
  return apply_blocks(*this, w) - h;
}

double QuadraticProblem::loss(const VectorXd& w) const {
  if (w.size() != dim()) throw InputError("loss: w has wrong length");
  return 0.5 * w.dot(apply_blocks(*this, w)) - h.dot(w);
}

double QuadraticProblem::optimal_loss() const { return -0.5 * h.dot(minimizer); }

double QuadraticProblem::gap(const VectorXd& w) const {
  if (w.size() != dim()) throw InputError("gap: w has wrong length");
  const VectorXd e = w - minimizer;
  return 0.5 * e.dot(apply_blocks(*this, e));
}

SymmetricOperator<double> QuadraticProblem::op() const {
  return SymmetricOperator<double>::dense(DenseSymmetric<double>(hessian));
}

QuadraticProblem problem_from_blocks(std::vector<DenseSymmetric<double>> blocks, VectorXd h) {
  if (blocks.empty()) throw InputError("quadratic problem needs at least one block");
  QuadraticProblem p;
  std::vector<Index> sizes;
  for (const auto& b : blocks) sizes.push_back(b.dim());
  p.partition = BlockPartition::from_sizes(sizes);
  const Index d = p.partition.dim();
  p.hessian = MatrixXd::Zero(d, d);
  if (h.size() == 0) h = VectorXd::Zero(d);
  if (h.size() != d) throw InputError("linear term has wrong length");
  p.h = std::move(h);
  p.minimizer = VectorXd::Zero(d);
  p.lambda_max = -std::numeric_limits<double>::infinity();
  p.lambda_min = std::numeric_limits<double>::infinity();
  for (std::size_t l = 0; l < blocks.size(); ++l) {
    const auto& r = p.partition.range(l);
    const MatrixXd& hl = blocks[l].matrix();
    p.hessian.block(r.start, r.start, r.size, r.size) = hl;
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(hl, Eigen::EigenvaluesOnly);
    if (es.info() != Eigen::Success) throw NumericalError("eigensolver failed on block " + std::to_string(l + 1));
    VectorXd eig = es.eigenvalues().reverse();  // descending
    if (!(eig[eig.size() - 1] > 0.0))
      throw InputError("block " + std::to_string(l + 1) + " is not positive definite");
    p.kappa_l.push_back(eig[0] / eig[eig.size() - 1]);
    p.lambda_max = std::max(p.lambda_max, eig[0]);
    p.lambda_min = std::min(p.lambda_min, eig[eig.size() - 1]);
    p.block_eigs.push_back(std::move(eig));
    p.minimizer.segment(r.start, r.size) = hl.ldlt().solve(p.h.segment(r.start, r.size));
  }
  p.kappa = p.lambda_max / p.lambda_min;
  p.blocks = std::move(blocks);
  return p;
}

QuadraticProblem problem_from_spectra(const std::vector<VectorXd>& spectra, std::uint64_t seed, QConstruction q) {
  std::vector<DenseSymmetric<double>> blocks;
  for (std::size_t l = 0; l < spectra.size(); ++l) {
    const VectorXd& lam = spectra[l];
    if (lam.size() == 0) throw InputError("block " + std::to_string(l + 1) + " has an empty spectrum");
    if (!(lam.minCoeff() > 0.0)) throw InputError("block " + std::to_string(l + 1) + " spectrum is not positive");
    const Index n = lam.size();
    Rng rng(derive_seed(seed, "q-block", l));
    MatrixXd g(n, n);
    std::normal_distribution<double> normal;
    for (Index j = 0; j < n; ++j)
      for (Index i = 0; i < n; ++i) g(i, j) = normal(rng);
    MatrixXd qm;
    if (q == QConstruction::Orthogonal) {
      Eigen::HouseholderQR<MatrixXd> qr(g);
      qm = qr.householderQ();
      const MatrixXd r = qr.matrixQR();
      for (Index j = 0; j < n; ++j)
        if (r(j, j) < 0) qm.col(j) *= -1.0;
    } else {
      qm = g;
    }
    blocks.push_back(DenseSymmetric<double>::symmetrized(qm * lam.asDiagonal() * qm.transpose()));
  }
  return problem_from_blocks(std::move(blocks));
}

std::vector<VectorXd> case_spectra(int which) {
  auto v = [](double a, double b, double c) { return VectorXd{{a, b, c}}; };
  if (which == 3) return {v(1, 2, 3), v(99, 100, 101), v(4998, 4999, 5000)};
  if (which == 4) return {v(1, 99, 4998), v(2, 100, 4999), v(3, 101, 5000)};
  throw InputError("case " + std::to_string(which) + " has no fixed spectrum (expected 3 or 4)");
}

std::vector<VectorXd> case_style_spectra(int which, int copies) {
  if (copies < 1) throw InputError("copies must be at least 1");
  std::vector<VectorXd> out;
  for (const auto& base : case_spectra(which)) {
    VectorXd rep(base.size() * copies);
    for (Index i = 0; i < base.size(); ++i) rep.segment(i * copies, copies).setConstant(base[i]);
    out.push_back(std::move(rep));
  }
  return out;
}

std::filesystem::path default_spectra_dir() {
  if (const char* env = std::getenv("HETLAB_SPECTRA_DIR"); env && *env) return env;
  return HETLAB_SPECTRA_DIR;
}

std::vector<VectorXd> sample_surrogate_spectra(const std::vector<VectorXd>& sources, Index per_block,
                                               std::uint64_t seed) {
  if (sources.empty()) throw InputError("no surrogate spectra");
  std::vector<VectorXd> out;
  for (std::size_t l = 0; l < sources.size(); ++l) {
    const VectorXd& src = sources[l];
    if (src.size() < per_block)
      throw InputError("surrogate spectrum " + std::to_string(l + 1) + " has fewer than " +
                       std::to_string(per_block) + " values");
    std::vector<Index> idx(static_cast<std::size_t>(src.size()));
    std::iota(idx.begin(), idx.end(), Index{0});
    Rng rng(derive_seed(seed, "surrogate", l));
    for (Index i = 0; i < per_block; ++i) {
      std::uniform_int_distribution<Index> pick(i, src.size() - 1);
      std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(pick(rng))]);
    }
    VectorXd s(per_block);
    for (Index i = 0; i < per_block; ++i) s[i] = src[idx[static_cast<std::size_t>(i)]];
    out.push_back(std::move(s));
  }
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& s : out) {
    lo = std::min(lo, s.minCoeff());
    hi = std::max(hi, s.maxCoeff());
  }
  if (!(hi > lo)) throw InputError("surrogate spectra are degenerate (all values equal)");
  for (auto& s : out) s = ((s.array() - lo) * (4999.0 / (hi - lo)) + 1.0).matrix();
  return out;
}

QuadraticProblem build_case(int which, std::uint64_t seed, QConstruction q, const std::filesystem::path& spectra_dir) {
  if (which == 3 || which == 4) return problem_from_spectra(case_spectra(which), seed, q);
  if (which != 1 && which != 2) throw InputError("unknown case " + std::to_string(which) + " (expected 1-4)");
  std::vector<VectorXd> sources;
  for (int l = 1; l <= 4; ++l)
    sources.push_back(io::load_eigenvalues_csv(spectra_dir / ("case" + std::to_string(which) + "_block" +
                                                              std::to_string(l) + ".csv")));
  return problem_from_spectra(sample_surrogate_spectra(sources, 25, seed), derive_seed(seed, "case-q"), q);
}

VectorXd gaussian_init(Index dim, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "init"));
  return gaussian_vector<double>(dim, rng);
}

std::vector<double> Trajectory::step_ratios() const {
  // Gaps in the subnormal range no longer carry a meaningful ratio.
  constexpr double kFloor = 1e-250;
  std::vector<double> out;
  for (std::size_t t = 0; t + 1 < records.size(); ++t) {
    if (!(records[t].gap > kFloor) || !(records[t + 1].gap > kFloor)) break;
    out.push_back(records[t + 1].gap / records[t].gap);
  }
  return out;
}

std::optional<long> Trajectory::iterations_to(double eps) const {
  for (const auto& r : records)
    if (r.rel_error <= eps) return r.step;
  return std::nullopt;
}

double gd_auto_eta(const QuadraticProblem& p) { return 2.0 / (p.lambda_max + p.lambda_min); }

namespace {

void check_start(const QuadraticProblem& p, const VectorXd& w0, const RunOptions& opts) {
  if (w0.size() != p.dim())
    throw InputError("initial point has length " + std::to_string(w0.size()) + ", expected " +
                     std::to_string(p.dim()));
  if (!w0.allFinite()) throw InputError("initial point is not finite");
  if (opts.steps < 0) throw InputError("step count must be non-negative");
}

// Appends the record for w; returns false when the run should stop.
bool record(const QuadraticProblem& p, const VectorXd& w, long step, const RunOptions& opts, Trajectory& t) {
  TrajectoryRecord rec;
  rec.step = step;
  rec.loss = p.loss(w);
  rec.gap = p.gap(w);
  const double gap0 = t.records.empty() ? rec.gap : t.records.front().gap;
  rec.rel_error = gap0 > 0.0 ? rec.gap / gap0 : 0.0;
  t.records.push_back(rec);
  if (opts.keep_iterates) t.iterates.push_back(w);
  if (!std::isfinite(rec.gap) || rec.gap > opts.divergence_factor * gap0) {
    t.diverged = true;
    return false;
  }
  if (opts.stop_rel_error > 0.0 && rec.rel_error <= opts.stop_rel_error) {
    t.stopped_early = step < opts.steps;
    return false;
  }
  return true;
}

}  // namespace

Trajectory run_gd(const QuadraticProblem& p, std::optional<double> eta, const VectorXd& w0, const RunOptions& opts) {
  check_start(p, w0, opts);
  const double step = eta ? *eta : gd_auto_eta(p);
  if (!(step > 0.0)) throw InputError("step size must be positive");
  Trajectory t;
  t.optimizer = "gd";
  t.eta = step;
  t.w0 = w0;
  VectorXd w = w0;
  bool go = record(p, w, 0, opts, t);
  for (long s = 1; go && s <= opts.steps; ++s) {
    w -= step * p.gradient(w);
    go = record(p, w, s, opts, t);
  }
  t.final_w = w;
  return t;
}

Trajectory run_adam(const QuadraticProblem& p, double eta, double beta2, const VectorXd& w0, const RunOptions& opts) {
  check_start(p, w0, opts);
  if (!(eta > 0.0)) throw InputError("step size must be positive");
  if (!(beta2 > 0.0 && beta2 <= 1.0)) throw InputError("beta2 must lie in (0, 1]");
  VectorXd g = p.gradient(w0);
  if (!(g.cwiseAbs().minCoeff() >= 1e-300))
    throw InputError("initial gradient has a zero coordinate; the Adam preconditioner would be singular");
  Trajectory t;
  t.optimizer = "adam";
  t.eta = eta;
  t.beta2 = beta2;
  t.w0 = w0;
  VectorXd w = w0;
  VectorXd v = g.cwiseAbs2();
  const VectorXd d_fixed = g.cwiseAbs();
  bool go = record(p, w, 0, opts, t);
  for (long s = 1; go && s <= opts.steps; ++s) {
    if (s > 1) {
      g = p.gradient(w);
      if (beta2 < 1.0) v = beta2 * v + (1.0 - beta2) * g.cwiseAbs2();
    }
    if (beta2 == 1.0)
      w -= eta * g.cwiseQuotient(d_fixed);
    else
      w -= eta * g.cwiseQuotient(v.cwiseSqrt());
    t.final_v = v;
    go = record(p, w, s, opts, t);
  }
  if (t.final_v.size() == 0) t.final_v = v;
  t.final_w = w;
  return t;
}

RConstants compute_r(const QuadraticProblem& p, const VectorXd& w0) {
  if (w0.size() != p.dim()) throw InputError("compute_r: initial point has wrong length");
  const VectorXd g = p.gradient(w0).cwiseAbs();
  if (!(g.minCoeff() >= 1e-300)) throw InputError("compute_r: initial gradient has a zero coordinate");
  RConstants c;
  double c2max = 0.0, c1min = std::numeric_limits<double>::infinity();
  for (std::size_t l = 0; l < p.num_blocks(); ++l) {
    const auto& r = p.partition.range(l);
    const double lam1 = p.block_eigs[l][0];
    const auto seg = g.segment(r.start, r.size);
    c.c1.push_back(seg.minCoeff() / lam1);
    c.c2.push_back(seg.maxCoeff() / lam1);
    c1min = std::min(c1min, c.c1.back());
    c2max = std::max(c2max, c.c2.back());
  }
  c.r = (c2max * c2max) / (c1min * c1min);
  for (double k : p.kappa_l) c.kappa_adam.push_back(c.r * k);
  c.theorem_eta = c1min;
  return c;
}

std::vector<double> preconditioned_condition_numbers(const QuadraticProblem& p, const VectorXd& w0) {
  if (w0.size() != p.dim()) throw InputError("initial point has wrong length");
  const VectorXd g = p.gradient(w0).cwiseAbs();
  if (!(g.minCoeff() >= 1e-300)) throw InputError("singular preconditioner: initial gradient has a zero coordinate");
  std::vector<double> out;
  for (std::size_t l = 0; l < p.num_blocks(); ++l) {
    const auto& r = p.partition.range(l);
    const VectorXd s = g.segment(r.start, r.size).cwiseSqrt().cwiseInverse();
    const MatrixXd m = s.asDiagonal() * p.blocks[l].matrix() * s.asDiagonal();
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(0.5 * (m + m.transpose()), Eigen::EigenvaluesOnly);
    if (es.info() != Eigen::Success) throw NumericalError("eigensolver failed on preconditioned block");
    out.push_back(es.eigenvalues().maxCoeff() / es.eigenvalues().minCoeff());
  }
  return out;
}

TheoryReport verify_gd_lower_bound(const Trajectory& traj, double kappa) {
  if (!(kappa >= 1.0)) throw InputError("condition number must be at least 1");
  TheoryReport rep;
  rep.check = "prop1";
  rep.kappa = kappa;
  rep.bound = 1.0 - 2.0 / (kappa + 1.0);
  const double squared = rep.bound * rep.bound;
  const auto ratios = traj.step_ratios();
  if (ratios.empty()) throw InputError("trajectory has no usable steps");
  rep.worst_ratio = *std::min_element(ratios.begin(), ratios.end());
  rep.worst_slack = rep.worst_ratio - rep.bound;
  rep.satisfied = rep.worst_slack >= -1e-9;
  double dev_literal = 0.0, dev_squared = 0.0, sqrt_min = 1e300, sqrt_max = 0.0;
  for (double r : ratios) {
    dev_literal = std::max(dev_literal, std::abs(r - rep.bound));
    dev_squared = std::max(dev_squared, std::abs(r - squared));
    sqrt_min = std::min(sqrt_min, std::sqrt(r));
    sqrt_max = std::max(sqrt_max, std::sqrt(r));
  }
  rep.details = {{"steps_checked", ratios.size()},
                 {"max_abs_deviation_from_bound", dev_literal},
                 {"squared_bound", squared},
                 {"max_abs_deviation_from_squared_bound", dev_squared},
                 {"satisfied_squared_bound", rep.worst_ratio >= squared - 1e-9},
                 {"sqrt_ratio_min", sqrt_min},
                 {"sqrt_ratio_max", sqrt_max},
                 {"eta", traj.eta}};
  rep.notes.push_back(
      "with the optimal step every eigen-mode of the error shrinks by at most (kappa-1)/(kappa+1) per step, so the "
      "loss (quadratic in the error) shrinks by at most its square; the ratio is compared against both values");
  return rep;
}

TheoryReport verify_adam_upper_bound(const QuadraticProblem& p, const VectorXd& w0, const Trajectory& traj, double eps) {
  if (traj.optimizer != "adam" || traj.beta2 != 1.0)
    throw InputError("Adam bound check needs a trajectory from Adam with beta2 = 1");
  if (traj.w0.size() != p.dim() || w0.size() != p.dim() || traj.w0 != w0)
    throw InputError("trajectory does not belong to this problem and initial point");
  TheoryReport rep;
  rep.check = "thm1";
  rep.kappa = p.kappa;
  rep.kappa_l = p.kappa_l;
  const RConstants c = compute_r(p, w0);
  rep.constants = c;
  rep.bound = 0.0;
  for (double k : p.kappa_l) rep.bound = std::max(rep.bound, 1.0 - 1.0 / (c.r * k));
  const auto ratios = traj.step_ratios();
  if (ratios.empty()) throw InputError("trajectory has no usable steps");
  rep.worst_ratio = *std::max_element(ratios.begin(), ratios.end());
  rep.worst_slack = rep.bound - rep.worst_ratio;
  rep.satisfied = rep.worst_ratio <= rep.bound + 1e-9;
  const double max_kl = *std::max_element(p.kappa_l.begin(), p.kappa_l.end());
  const double log_eps = std::log(1.0 / eps);
  const auto measured = traj.iterations_to(eps);
  const bool faster = c.r * max_kl < p.kappa;
  rep.details = {{"eta", traj.eta},
                 {"theorem_eta", c.theorem_eta},
                 {"eta_matches_theorem", std::abs(traj.eta - c.theorem_eta) <= 1e-12 * c.theorem_eta},
                 {"steps_checked", ratios.size()},
                 {"eps", eps},
                 {"measured_iterations_to_eps", measured ? json(*measured) : json(nullptr)},
                 {"predicted_adam_iterations", c.r * max_kl * log_eps},
                 {"predicted_gd_iterations", p.kappa * log_eps},
                 {"r_times_max_kappa_l", c.r * max_kl},
                 {"verdict", faster ? "Adam provably faster" : "no separation"}};
  rep.notes.push_back(
      "step size: the theorem statement reads eta = min_l 1/C_{l,1} while its proof needs eta = min_l C_{l,1}; "
      "the proof's choice is the one checked here");
  return rep;
}

LimitCycle detect_limit_cycle(const Trajectory& traj) {
  if (traj.records.size() < 1001) throw InputError("limit-cycle detection needs at least 1000 recorded steps");
  const std::size_t n = traj.records.size() - 1;
  LimitCycle lc;
  lc.initial_loss = traj.records.front().gap;
  lc.liminf_estimate = std::numeric_limits<double>::infinity();
  for (std::size_t t = n - n / 2; t <= n; ++t) lc.liminf_estimate = std::min(lc.liminf_estimate, traj.records[t].gap);
  lc.non_converged = lc.liminf_estimate > 1e-8 * lc.initial_loss;
  return lc;
}

TheoryReport limit_cycle_report(const Trajectory& traj) {
  const LimitCycle lc = detect_limit_cycle(traj);
  TheoryReport rep;
  rep.check = "prop2";
  rep.bound = 1e-8 * lc.initial_loss;
  rep.worst_ratio = lc.liminf_estimate;
  rep.worst_slack = lc.liminf_estimate - rep.bound;
  // beta2 < 1 is expected to cycle; beta2 = 1 and GD are expected to converge.
  const bool expect_cycle = traj.optimizer == "adam" && traj.beta2 < 1.0;
  rep.satisfied = lc.non_converged == expect_cycle;
  rep.details = {{"non_converged", lc.non_converged},
                 {"liminf_estimate", lc.liminf_estimate},
                 {"initial_loss", lc.initial_loss},
                 {"expected_non_convergence", expect_cycle},
                 {"beta2", traj.beta2},
                 {"eta", traj.eta}};
  return rep;
}

std::vector<double> default_eta_grid() {
  std::vector<double> g;
  for (int e = -6; e <= 0; ++e)
    for (double m : {1.0, 3.0}) {
      const double v = m * std::pow(10.0, e);
      if (v <= 1.0) g.push_back(v);
    }
  return g;
}

double MonteCarloStats::fraction_r_at_most(double bound) const {
  if (r.empty()) return 0.0;
  return static_cast<double>(std::count_if(r.begin(), r.end(), [&](double x) { return x <= bound; })) /
         static_cast<double>(r.size());
}

std::vector<double> MonteCarloStats::mean_multipliers() const {
  if (multipliers.empty()) return {};
  std::vector<double> mean(multipliers.front().size(), 0.0);
  for (const auto& m : multipliers)
    for (std::size_t l = 0; l < m.size(); ++l) mean[l] += m[l];
  for (double& x : mean) x /= static_cast<double>(multipliers.size());
  return mean;
}

MonteCarloStats monte_carlo_case(int which, int trials, std::uint64_t seed, unsigned workers, QConstruction q) {
  if (trials < 1) throw InputError("need at least one trial");
  MonteCarloStats st;
  st.r.resize(static_cast<std::size_t>(trials));
  st.multipliers.resize(static_cast<std::size_t>(trials));
  parallel_for(st.r.size(), workers, [&](std::size_t i) {
    const std::uint64_t s = derive_seed(seed, "mc-trial", i);
    const QuadraticProblem p = build_case(which, derive_seed(s, "problem"), q);
    const VectorXd w0 = gaussian_init(p.dim(), derive_seed(s, "w0"));
    st.r[i] = compute_r(p, w0).r;
    const auto pk = preconditioned_condition_numbers(p, w0);
    std::vector<double> mult(pk.size());
    for (std::size_t l = 0; l < pk.size(); ++l) mult[l] = pk[l] / p.kappa_l[l];
    st.multipliers[i] = std::move(mult);
  });
  return st;
}

json to_json(const RConstants& c) {
  return {{"C1", c.c1}, {"C2", c.c2}, {"r", c.r}, {"kappa_adam", c.kappa_adam}, {"theorem_eta", c.theorem_eta}};
}

json to_json(const TheoryReport& r) {
  json j = {{"check", r.check},       {"kappa", r.kappa},           {"kappa_l", r.kappa_l},
            {"bound", r.bound},       {"worst_ratio", r.worst_ratio}, {"worst_slack", r.worst_slack},
            {"satisfied", r.satisfied}, {"details", r.details},     {"notes", r.notes}};
  if (r.constants) j["constants"] = to_json(*r.constants);
  return j;
}

std::string trajectory_csv(const Trajectory& t) {
  std::string out = "step,loss,rel_error\n";
  for (const auto& r : t.records)
    out += std::to_string(r.step) + "," + io::format_double(r.loss) + "," + io::format_double(r.rel_error) + "\n";
  return out;
}

}  // namespace hetlab
