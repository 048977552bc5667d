#include "hetlab/cli.hpp"

#include "hetlab/io.hpp"
#include "hetlab/lanczos.hpp"
#include "hetlab/nnlab.hpp"
#include "hetlab/quadlab.hpp"
#include "hetlab/slq.hpp"
#include "hetlab/spectra.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdlib>
#include <iostream>
#include <optional>
#include <sstream>

namespace hetlab::cli {

namespace {

namespace fs = std::filesystem;
using Eigen::VectorXd;
using nlohmann::json;

constexpr int kSchemaVersion = 1;

std::string default_out_dir(const std::string& command) {
  if (const char* env = std::getenv("HETLAB_OUT_DIR"); env && *env) return (fs::path(env) / command).string();
  return (fs::path("hetlab_out") / command).string();
}

bool parse_switch(const std::string& s, const std::string& what) {
  if (s == "on" || s == "true" || s == "1") return true;
  if (s == "off" || s == "false" || s == "0") return false;
  throw InputError(what + " must be on or off, got '" + s + "'");
}

std::optional<double> parse_sigma(const std::string& s) {
  if (s == "auto") return std::nullopt;
  double v = 0.0;
  try {
    std::size_t used = 0;
    v = std::stod(s, &used);
    if (used != s.size()) throw InputError("");
  } catch (const std::exception&) {
    throw InputError("--sigma must be 'auto' or a positive number, got '" + s + "'");
  }
  if (!(v > 0.0)) throw InputError("--sigma must be positive, got " + s);
  return v;
}

// Where a symmetric operator comes from: a CSV matrix, a quadratic case Hessian, or diag(1..n).
struct OperatorSource {
  std::string matrix;
  int case_id = 0;
  int copies = 1;
  long diagonal = 0;
  std::string q = "orthogonal";

  void add(CLI::App* app) {
    app->add_option("--matrix", matrix, "Dense symmetric matrix CSV");
    app->add_option("--case", case_id, "Hessian of quadratic case 1-4 (0: unused)")->check(CLI::Range(0, 4));
    app->add_option("--copies", copies, "Repeat each Case 3/4 eigenvalue this many times")->check(CLI::Range(1, 100000));
    app->add_option("--diagonal", diagonal, "Use diag(1, ..., n) (0: unused)")->check(CLI::NonNegativeNumber);
    app->add_option("--q", q, "Case Q construction: orthogonal or gaussian");
  }

  bool given() const { return !matrix.empty() || case_id != 0 || diagonal != 0; }

  struct Built {
    std::optional<SymmetricOperator<double>> op;
    std::optional<BlockPartition> partition;
  };

  Built build(std::uint64_t seed) const {
    const int count = (!matrix.empty()) + (case_id != 0) + (diagonal != 0);
    if (count != 1) throw InputError("give exactly one of --matrix, --case, --diagonal");
    Built b;
    if (!matrix.empty()) {
      b.op = SymmetricOperator<double>::dense(DenseSymmetric<double>(io::load_matrix_csv(matrix)));
    } else if (diagonal != 0) {
      b.op = SymmetricOperator<double>::diagonal(VectorXd::LinSpaced(diagonal, 1.0, static_cast<double>(diagonal)));
    } else {
      const auto qc = q_construction_from_string(q);
      const std::uint64_t ps = derive_seed(seed, "problem");
      QuadraticProblem p = (copies > 1 && (case_id == 3 || case_id == 4))
                               ? problem_from_spectra(case_style_spectra(case_id, copies), ps, qc)
                               : build_case(case_id, ps, qc);
      b.op = p.op();
      b.partition = p.partition;
    }
    return b;
  }
};

struct ProbeOptions {
  long m = 100;
  int num_probes = 10;
  std::string sigma = "auto";
  std::uint64_t seed = 0;
  std::string probe = "gaussian";
  std::string reorth = "on";
  unsigned workers = 1;

  void add(CLI::App* app) {
    app->add_option("--m", m, "Lanczos steps")->check(CLI::PositiveNumber);
    app->add_option("--num-probes", num_probes, "Probe vectors n_v")->check(CLI::PositiveNumber);
    app->add_option("--sigma", sigma, "Blur width, or auto for 0.01 x node range");
    app->add_option("--seed", seed, "Run seed");
    app->add_option("--probe", probe, "gaussian or rademacher");
    app->add_option("--reorth", reorth, "Full reorthogonalization: on or off");
    app->add_option("--workers", workers, "Worker threads for probes");
  }

  ProbeConfig config() const {
    ProbeConfig pc;
    pc.steps = m;
    pc.num_probes = num_probes;
    pc.seed = seed;
    pc.distribution = probe_distribution_from_string(probe);
    pc.reorthogonalize = parse_switch(reorth, "--reorth");
    pc.workers = workers;
    pc.validate();
    return pc;
  }
};

struct SlqCommand {
  OperatorSource source;
  ProbeOptions probes;
  std::string partition;
  long block = 0;
  int grid_points = kDefaultGridPoints;
  std::string out;
};

struct HeatmapCommand {
  std::string densities;
  OperatorSource source;
  ProbeOptions probes;
  std::string partition;
  bool normalize_10th = false;
  bool simplified = false;
  double block_fraction = 0.5;
  int grid_points = kDefaultGridPoints;
  std::string out;
};

struct QuadCommand {
  int case_id = 0;
  std::vector<std::string> spectra;
  double d1_kappa = 0.0;
  int copies = 1;
  std::string q = "orthogonal";
  std::string optimizer = "gd";
  double beta2 = 1.0;
  std::string eta = "auto";
  long steps = 1000;
  std::uint64_t seed = 0;
  std::vector<double> w0;
  std::string verify = "none";
  double stop_rel_error = 0.0;
  double eps = 1e-3;
  std::string out;
};

struct BlockdiagCommand {
  long dim = 64;
  long width = 8;
  int n_per_class = 50;
  std::string activation = "tanh";
  std::string optimizer = "adamw";
  double lr = 1e-4;
  double weight_decay = 0.01;
  long steps = 1000;
  long record_every = 100;
  double fd_step = 1e-5;
  std::uint64_t seed = 0;
  std::string out;
};

struct ScalingCommand {
  std::vector<double> c{1.0, 10.0};
  std::vector<double> lr{1e-4, 3e-4, 1e-3, 3e-3, 1e-2, 3e-2, 1e-1};
  std::vector<long> hidden{300, 128, 64};
  int n_per_class = 100;
  int classes = 10;
  long dim = 64;
  double test_fraction = 0.2;
  long steps = 50;
  long batch_size = 128;
  double sgd_momentum = 0.9;
  double weight_decay = 0.01;
  long hessian_samples = 128;
  long slq_steps = 20;
  int slq_probes = 2;
  unsigned workers = 1;
  std::uint64_t seed = 0;
  std::string out;
};

struct SlqNetCommand {
  long dim = 16;
  std::vector<long> hidden{16};
  int classes = 4;
  int n_per_class = 25;
  std::string activation = "tanh";
  double scale = 1.0;
  long train_steps = 0;
  std::string optimizer = "adamw";
  double lr = 1e-3;
  long m = 100;
  int num_probes = 10;
  bool normalize_10th = false;
  int grid_points = kDefaultGridPoints;
  std::uint64_t seed = 0;
  std::string out;
};

void write_manifest(const fs::path& dir, const std::string& manifest) {
  io::write_text(dir / "manifest.ini", manifest);
}

SpectralDensity apply_sigma(SpectralDensity d, const std::optional<double>& sigma) {
  return sigma ? d.with_sigma(*sigma) : d;
}

int cmd_slq(const SlqCommand& c, const std::string& manifest, std::ostream& out) {
  const ProbeConfig pc = c.probes.config();
  const auto sigma = parse_sigma(c.probes.sigma);
  if (c.grid_points < kMinGridPoints) throw InputError("--grid-points must be at least 256");
  auto built = c.source.build(c.probes.seed);
  SymmetricOperator<double> op = *built.op;
  std::string label = "operator";
  if (c.block != 0) {
    BlockPartition part = !c.partition.empty() ? io::load_partition_json(c.partition)
                          : built.partition   ? *built.partition
                                              : throw InputError("--block needs --partition");
    if (c.block < 1 || static_cast<std::size_t>(c.block) > part.num_blocks())
      throw InputError("--block " + std::to_string(c.block) + " is outside 1.." + std::to_string(part.num_blocks()));
    op = block_restrict(op, part, static_cast<std::size_t>(c.block - 1));
    label = "block " + std::to_string(c.block);
  } else if (!c.partition.empty()) {
    throw InputError("--partition needs --block");
  }
  const SpectralDensity d = slq_density(op, pc, sigma, label);
  const GridSpec grid = covering_grid({&d}, c.grid_points);
  const fs::path dir = c.out;
  io::write_text(dir / "density.csv", io::density_csv(d, grid));
  json j = io::density_to_json(d);
  j["grid"] = io::grid_to_json(grid);
  io::write_text(dir / "density.json", io::dump(j));
  write_manifest(dir, manifest);
  out << "slq: " << label << " dim=" << op.dim() << " nodes in [" << io::format_double(d.min_node()) << ", "
      << io::format_double(d.max_node()) << "] sigma=" << io::format_double(d.sigma) << "\n"
      << "wrote " << (dir / "density.csv").string() << "\n";
  return kExitOk;
}

int cmd_heatmap(const HeatmapCommand& c, const std::string& manifest, std::ostream& out) {
  if (c.grid_points < kMinGridPoints) throw InputError("--grid-points must be at least 256");
  std::vector<SpectralDensity> ds;
  if (!c.densities.empty()) {
    if (c.source.given()) throw InputError("give either --densities or an operator, not both");
    if (!fs::is_directory(c.densities)) throw InputError("'" + c.densities + "' is not a directory");
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(c.densities))
      if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      SpectralDensity d = io::load_density_json(f);
      if (d.label.empty()) d.label = f.stem().string();
      ds.push_back(std::move(d));
    }
  } else {
    auto built = c.source.build(c.probes.seed);
    BlockPartition part = !c.partition.empty() ? io::load_partition_json(c.partition)
                          : built.partition   ? *built.partition
                                              : throw InputError("operator heatmap needs --partition");
    const auto sigma = parse_sigma(c.probes.sigma);
    if (c.simplified) {
      SimplifiedConfig sc;
      sc.block_fraction = c.block_fraction;
      sc.num_probes = c.probes.num_probes;
      sc.steps = c.probes.m;
      sc.distribution = probe_distribution_from_string(c.probes.probe);
      sc.seed = c.probes.seed;
      sc.reorthogonalize = parse_switch(c.probes.reorth, "--reorth");
      for (auto& bd : slq_simplified(*built.op, part, sc)) ds.push_back(apply_sigma(std::move(bd.density), sigma));
    } else {
      for (auto& d : blockwise_densities(*built.op, part, c.probes.config())) ds.push_back(apply_sigma(std::move(d), sigma));
    }
  }
  if (ds.size() < 2) throw InputError("heatmap needs at least 2 densities, found " + std::to_string(ds.size()));
  const HeterogeneityReport rep = heterogeneity_report(ds, c.grid_points, c.normalize_10th);
  const fs::path dir = c.out;
  io::write_text(dir / "pairwise.csv", io::pairwise_csv(rep));
  io::write_text(dir / "report.json", io::dump(io::report_to_json(rep)));
  write_manifest(dir, manifest);
  out << "heatmap: " << ds.size() << " densities, js0=" << io::format_double(rep.js0) << "\n";
  return kExitOk;
}

int cmd_quad(const QuadCommand& c, const std::string& manifest, std::ostream& out) {
  const int sources = (c.case_id != 0) + (!c.spectra.empty()) + (c.d1_kappa != 0.0);
  if (sources != 1) throw InputError("give exactly one of --case, --spectra, --d1-kappa");
  if (c.optimizer != "gd" && c.optimizer != "adam") throw InputError("--optimizer must be gd or adam");
  if (c.verify != "none" && c.verify != "prop1" && c.verify != "thm1" && c.verify != "prop2")
    throw InputError("--verify must be none, prop1, thm1 or prop2");
  if (c.verify == "prop1" && c.optimizer != "gd") throw InputError("--verify prop1 applies to gd only");
  if (c.verify == "thm1" && (c.optimizer != "adam" || c.beta2 != 1.0))
    throw InputError("--verify thm1 applies to adam with --beta2 1 only");
  if (c.verify == "prop2" && c.steps < 1000) throw InputError("--verify prop2 needs at least 1000 steps");

  const auto qc = q_construction_from_string(c.q);
  const std::uint64_t ps = derive_seed(c.seed, "problem");
  QuadraticProblem p;
  VectorXd w0;
  if (c.case_id != 0) {
    p = (c.copies > 1 && (c.case_id == 3 || c.case_id == 4))
            ? problem_from_spectra(case_style_spectra(c.case_id, c.copies), ps, qc)
            : build_case(c.case_id, ps, qc);
  } else if (!c.spectra.empty()) {
    std::vector<VectorXd> eigs;
    for (const auto& f : c.spectra) eigs.push_back(io::load_eigenvalues_csv(f));
    p = problem_from_spectra(eigs, ps, qc);
  } else {
    if (!(c.d1_kappa >= 1.0)) throw InputError("--d1-kappa must be at least 1");
    std::vector<DenseSymmetric<double>> blocks{DenseSymmetric<double>(Eigen::MatrixXd::Constant(1, 1, c.d1_kappa)),
                                               DenseSymmetric<double>(Eigen::MatrixXd::Constant(1, 1, 1.0))};
    p = problem_from_blocks(std::move(blocks));
    w0 = VectorXd{{std::sqrt(1.0 / c.d1_kappa), std::sqrt(c.d1_kappa)}};
  }
  if (!c.w0.empty()) w0 = Eigen::Map<const VectorXd>(c.w0.data(), static_cast<Index>(c.w0.size()));
  if (w0.size() == 0) w0 = gaussian_init(p.dim(), derive_seed(c.seed, "w0"));
  if (w0.size() != p.dim()) throw InputError("--w0 has " + std::to_string(w0.size()) + " entries, problem has " +
                                             std::to_string(p.dim()));

  RunOptions ro;
  ro.steps = c.steps;
  ro.stop_rel_error = c.stop_rel_error;
  Trajectory t;
  if (c.optimizer == "gd") {
    std::optional<double> eta;
    if (c.eta != "auto") {
      if (c.eta == "theorem") throw InputError("--eta theorem applies to adam only");
      eta = std::stod(c.eta);
    }
    t = run_gd(p, eta, w0, ro);
  } else {
    const double eta = (c.eta == "auto" || c.eta == "theorem") ? compute_r(p, w0).theorem_eta : std::stod(c.eta);
    t = run_adam(p, eta, c.beta2, w0, ro);
  }
  const fs::path dir = c.out;
  io::write_text(dir / "trajectory.csv", trajectory_csv(t));
  std::optional<TheoryReport> rep;
  if (c.verify == "prop1") rep = verify_gd_lower_bound(t, p.kappa);
  if (c.verify == "thm1") rep = verify_adam_upper_bound(p, w0, t, c.eps);
  if (c.verify == "prop2") rep = limit_cycle_report(t);
  if (rep) {
    json j = to_json(*rep);
    j["problem"] = {{"dim", p.dim()}, {"kappa", p.kappa}, {"kappa_l", p.kappa_l}};
    j["diverged"] = t.diverged;
    io::write_text(dir / "theory.json", io::dump(j));
  }
  write_manifest(dir, manifest);
  out << "quad: " << c.optimizer << " eta=" << io::format_double(t.eta) << " steps=" << t.records.back().step
      << " final rel_error=" << io::format_double(t.records.back().rel_error) << (t.diverged ? " (diverged)" : "")
      << "\n";
  if (rep) out << "bound satisfied: " << (rep->satisfied ? "true" : "false") << "\n";
  return kExitOk;
}

std::vector<Index> to_index(const std::vector<long>& v) { return {v.begin(), v.end()}; }

int cmd_blockdiag(const BlockdiagCommand& c, const std::string& manifest, std::ostream& out) {
  if (c.record_every < 1) throw InputError("record-every must be positive");
  const Dataset data = generate_cluster_data(c.n_per_class, 2, c.dim, derive_seed(c.seed, "data"));
  const MlpModel model =
      MlpModel::make({c.dim, c.width, 1}, activation_from_string(c.activation), 1.0, false, LossKind::BinaryLogistic);
  const VectorXd w0 = init_params(model, derive_seed(c.seed, "init"));
  const BlockPartition part = neuron_partition(model);

  double eq1_err = 0.0;
  {
    const auto h = exact_hessian_small(model, data, w0, c.fd_step);
    for (Index i = 0; i < c.width; ++i)
      for (Index j = 0; j < c.width; ++j) {
        if (i == j) continue;
        const auto fd = h.matrix().block(i * c.dim, j * c.dim, c.dim, c.dim);
        const Eigen::MatrixXd formula = eq1_offdiag_block(model, data, w0, i, j);
        eq1_err = std::max(eq1_err, (fd - formula).norm() / std::max(formula.norm(), 1e-300));
      }
  }

  TrainerSpec spec;
  spec.optimizer = optimizer_from_string(c.optimizer);
  spec.eta = c.lr;
  spec.weight_decay = c.weight_decay;
  spec.batch_size = data.size();
  spec.steps = c.steps;
  spec.seed = derive_seed(c.seed, "train");
  std::string csv = "step,dominance,loss,train_accuracy\n";
  auto row = [&](long step, const VectorXd& w) {
    const double dom = block_dominance(exact_hessian_small(model, data, w, c.fd_step), part);
    csv += std::to_string(step) + "," + io::format_double(dom) + "," + io::format_double(loss_value(model, data, w)) +
           "," + io::format_double(accuracy(model, data, w)) + "\n";
    return dom;
  };
  const double dom0 = row(0, w0);
  double dom_final = dom0;
  const auto res = train(model, data, spec, w0, [&](long t, const VectorXd& w) {
    if (t % c.record_every == 0 || t == c.steps) dom_final = row(t, w);
  });
  const double acc = accuracy(model, data, res.w);
  const fs::path dir = c.out;
  io::write_text(dir / "dominance.csv", csv);
  const json summary = {{"dominance_init", dom0},
                        {"dominance_final", dom_final},
                        {"dominance_increased", dom_final > dom0},
                        {"final_train_accuracy", acc},
                        {"eq1_max_relative_error", eq1_err},
                        {"parameters", model.num_params()}};
  io::write_text(dir / "summary.json", io::dump(summary));
  write_manifest(dir, manifest);
  out << "blockdiag: dominance " << io::format_double(dom0) << " -> " << io::format_double(dom_final)
      << ", train accuracy " << io::format_double(acc) << "%\n";
  return kExitOk;
}

int cmd_scaling(const ScalingCommand& c, const std::string& manifest, std::ostream& out) {
  const Dataset data = generate_cluster_data(c.n_per_class, c.classes, c.dim, derive_seed(c.seed, "data"));
  auto [train_set, test_set] = train_test_split(data, c.test_fraction, derive_seed(c.seed, "split"));
  ScalingConfig cfg;
  cfg.c_values = c.c;
  cfg.lr_grid = c.lr;
  cfg.hidden = to_index(c.hidden);
  cfg.batch_size = c.batch_size;
  cfg.steps = c.steps;
  cfg.sgd_momentum = c.sgd_momentum;
  cfg.adamw_weight_decay = c.weight_decay;
  cfg.hessian_samples = c.hessian_samples;
  cfg.slq_steps = c.slq_steps;
  cfg.slq_probes = c.slq_probes;
  cfg.workers = c.workers;
  cfg.seed = c.seed;
  const ScalingTable table = heterogeneity_experiment(cfg, train_set, test_set);
  const fs::path dir = c.out;
  io::write_text(dir / "scaling.csv", scaling_csv(table));
  io::write_text(dir / "scaling.json", io::dump(to_json(table)));
  write_manifest(dir, manifest);
  for (const auto& r : table.rows)
    out << "c=" << io::format_double(r.c) << " js0=" << io::format_double(r.js0)
        << " best sgd=" << io::format_double(r.best_sgd) << " best adamw=" << io::format_double(r.best_adamw) << "\n";
  return kExitOk;
}

int cmd_slq_net(const SlqNetCommand& c, const std::string& manifest, std::ostream& out) {
  if (c.grid_points < kMinGridPoints) throw InputError("grid-points must be at least 256");
  const Dataset data = generate_cluster_data(c.n_per_class, c.classes, c.dim, derive_seed(c.seed, "data"));
  std::vector<Index> widths{c.dim};
  for (long h : c.hidden) widths.push_back(h);
  widths.push_back(c.classes);
  const MlpModel model = MlpModel::make(widths, activation_from_string(c.activation), c.scale);
  VectorXd w = init_params(model, derive_seed(c.seed, "init"));
  if (c.train_steps > 0) {
    TrainerSpec spec;
    spec.optimizer = optimizer_from_string(c.optimizer);
    spec.eta = c.lr;
    spec.batch_size = data.size();
    spec.steps = c.train_steps;
    spec.seed = derive_seed(c.seed, "train");
    w = train(model, data, spec, w).w;
  }
  ProbeConfig pc;
  pc.steps = c.m;
  pc.num_probes = c.num_probes;
  pc.seed = derive_seed(c.seed, "spectra");
  const auto ds = blockwise_densities(hessian_operator(model, data, w), model.partition(), pc, model.block_labels());
  const fs::path dir = c.out;
  for (std::size_t k = 0; k < ds.size(); ++k) {
    char name[32];
    std::snprintf(name, sizeof(name), "density_%02zu.json", k + 1);
    io::write_text(dir / "densities" / name, io::dump(io::density_to_json(ds[k])));
  }
  const HeterogeneityReport rep = heterogeneity_report(ds, c.grid_points, c.normalize_10th);
  io::write_text(dir / "pairwise.csv", io::pairwise_csv(rep));
  io::write_text(dir / "report.json", io::dump(io::report_to_json(rep)));
  write_manifest(dir, manifest);
  out << "slq-net: " << ds.size() << " blocks, " << model.num_params() << " parameters, js0="
      << io::format_double(rep.js0) << "\n";
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app("Blockwise Hessian spectra, heterogeneity metrics and quadratic optimizer experiments", "hetlab");
  app.option_defaults()->always_capture_default();
  app.set_config("--config", "", "Key=value run config (a manifest.ini from an earlier run works)");
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.require_subcommand(1);
  int schema = kSchemaVersion;
  app.add_option("--schema-version", schema, "Config schema version")->check(CLI::Range(kSchemaVersion, kSchemaVersion));

  auto sub = [&](CLI::App* parent, const std::string& name, const std::string& desc) {
    CLI::App* s = parent->add_subcommand(name, desc);
    s->configurable();
    s->allow_config_extras(CLI::config_extras_mode::error);
    return s;
  };

  SlqCommand slq;
  slq.out = default_out_dir("slq");
  CLI::App* s_slq = sub(&app, "slq", "Spectral density of an operator or one of its blocks");
  slq.source.add(s_slq);
  slq.probes.add(s_slq);
  s_slq->add_option("--partition", slq.partition, "Partition JSON ([start, end] pairs, 1-based)");
  s_slq->add_option("--block", slq.block, "Block number (1-based, 0: whole operator)");
  s_slq->add_option("--grid-points", slq.grid_points, "Density CSV grid size");
  s_slq->add_option("--out", slq.out, "Output directory");

  HeatmapCommand hm;
  hm.out = default_out_dir("heatmap");
  CLI::App* s_hm = sub(&app, "heatmap", "Pairwise JS distances and js0 over blockwise densities");
  s_hm->add_option("--densities", hm.densities, "Directory of density JSON files");
  hm.source.add(s_hm);
  hm.probes.add(s_hm);
  s_hm->add_option("--partition", hm.partition, "Partition JSON");
  s_hm->add_flag("--normalize-10th", hm.normalize_10th, "Divide each density's nodes by its 10th largest node");
  s_hm->add_flag("--simplified", hm.simplified, "Sample a fraction of blocks with the reduced probe budget");
  s_hm->add_option("--block-fraction", hm.block_fraction, "Fraction of blocks for --simplified");
  s_hm->add_option("--grid-points", hm.grid_points, "Points per pairwise grid");
  s_hm->add_option("--out", hm.out, "Output directory");

  QuadCommand qd;
  qd.out = default_out_dir("quad");
  CLI::App* s_q = sub(&app, "quad", "GD or Adam on a block-diagonal quadratic");
  s_q->add_option("--case", qd.case_id, "Case 1-4 (0: unused)")->check(CLI::Range(0, 4));
  s_q->add_option("--spectra", qd.spectra, "Eigenvalue CSV per block");
  s_q->add_option("--d1-kappa", qd.d1_kappa, "Two-coordinate instance diag(kappa, 1) with its extremal start");
  s_q->add_option("--copies", qd.copies, "Repeat each Case 3/4 eigenvalue this many times")->check(CLI::Range(1, 100000));
  s_q->add_option("--q", qd.q, "orthogonal or gaussian");
  s_q->add_option("--optimizer", qd.optimizer, "gd or adam");
  s_q->add_option("--beta2", qd.beta2, "Adam beta2 in (0, 1]");
  s_q->add_option("--eta", qd.eta, "Step size, auto, or theorem (adam)");
  s_q->add_option("--steps", qd.steps, "Iterations")->check(CLI::NonNegativeNumber);
  s_q->add_option("--seed", qd.seed, "Run seed");
  s_q->add_option("--w0", qd.w0, "Initial point (default: seeded standard Gaussian)");
  s_q->add_option("--verify", qd.verify, "none, prop1, thm1 or prop2");
  s_q->add_option("--stop-rel-error", qd.stop_rel_error, "Stop once the relative error reaches this (0: never)");
  s_q->add_option("--eps", qd.eps, "Target relative error for iteration counts in thm1 reports");
  s_q->add_option("--out", qd.out, "Output directory");

  CLI::App* s_mlp = sub(&app, "mlp", "Small-network experiments");
  s_mlp->require_subcommand(1);

  BlockdiagCommand bd;
  bd.out = default_out_dir("mlp-blockdiag");
  CLI::App* s_bd = sub(s_mlp, "blockdiag", "Hessian block dominance along training of a one-hidden-layer net");
  s_bd->add_option("--dim", bd.dim)->check(CLI::PositiveNumber);
  s_bd->add_option("--width", bd.width)->check(CLI::PositiveNumber);
  s_bd->add_option("--n-per-class", bd.n_per_class)->check(CLI::PositiveNumber);
  s_bd->add_option("--activation", bd.activation);
  s_bd->add_option("--optimizer", bd.optimizer);
  s_bd->add_option("--lr", bd.lr);
  s_bd->add_option("--weight-decay", bd.weight_decay);
  s_bd->add_option("--steps", bd.steps)->check(CLI::NonNegativeNumber);
  s_bd->add_option("--record-every", bd.record_every);
  s_bd->add_option("--fd-step", bd.fd_step);
  s_bd->add_option("--seed", bd.seed);
  s_bd->add_option("--out", bd.out);

  ScalingCommand sc;
  sc.out = default_out_dir("mlp-scaling");
  CLI::App* s_sc = sub(s_mlp, "scaling", "Per-layer output scaling: JS0 at init and best SGD/AdamW accuracy");
  s_sc->add_option("--c", sc.c, "Scale constants");
  s_sc->add_option("--lr", sc.lr, "Learning-rate grid");
  s_sc->add_option("--hidden", sc.hidden, "Hidden widths");
  s_sc->add_option("--n-per-class", sc.n_per_class)->check(CLI::PositiveNumber);
  s_sc->add_option("--classes", sc.classes)->check(CLI::PositiveNumber);
  s_sc->add_option("--dim", sc.dim)->check(CLI::PositiveNumber);
  s_sc->add_option("--test-fraction", sc.test_fraction);
  s_sc->add_option("--steps", sc.steps)->check(CLI::NonNegativeNumber);
  s_sc->add_option("--batch-size", sc.batch_size)->check(CLI::PositiveNumber);
  s_sc->add_option("--sgd-momentum", sc.sgd_momentum);
  s_sc->add_option("--weight-decay", sc.weight_decay);
  s_sc->add_option("--hessian-samples", sc.hessian_samples)->check(CLI::PositiveNumber);
  s_sc->add_option("--slq-steps", sc.slq_steps)->check(CLI::PositiveNumber);
  s_sc->add_option("--slq-probes", sc.slq_probes)->check(CLI::PositiveNumber);
  s_sc->add_option("--workers", sc.workers);
  s_sc->add_option("--seed", sc.seed);
  s_sc->add_option("--out", sc.out);

  SlqNetCommand sn;
  sn.out = default_out_dir("mlp-slq-net");
  CLI::App* s_sn = sub(s_mlp, "slq-net", "Blockwise Hessian densities of a fresh or briefly trained net");
  s_sn->add_option("--dim", sn.dim)->check(CLI::PositiveNumber);
  s_sn->add_option("--hidden", sn.hidden);
  s_sn->add_option("--classes", sn.classes)->check(CLI::PositiveNumber);
  s_sn->add_option("--n-per-class", sn.n_per_class)->check(CLI::PositiveNumber);
  s_sn->add_option("--activation", sn.activation);
  s_sn->add_option("--scale", sn.scale);
  s_sn->add_option("--train-steps", sn.train_steps)->check(CLI::NonNegativeNumber);
  s_sn->add_option("--optimizer", sn.optimizer);
  s_sn->add_option("--lr", sn.lr);
  s_sn->add_option("--m", sn.m)->check(CLI::PositiveNumber);
  s_sn->add_option("--num-probes", sn.num_probes)->check(CLI::PositiveNumber);
  s_sn->add_flag("--normalize-10th", sn.normalize_10th);
  s_sn->add_option("--grid-points", sn.grid_points);
  s_sn->add_option("--seed", sn.seed);
  s_sn->add_option("--out", sn.out);

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  // Root options, then the one command that ran, under its section so the file replays as --config.
  std::string manifest = "schema-version=" + std::to_string(schema) + "\n";
  for (CLI::App* leaf : {s_slq, s_hm, s_q, s_bd, s_sc, s_sn}) {
    if (!leaf->parsed()) continue;
    const std::string section = leaf->get_parent() == &app ? leaf->get_name() : "mlp." + leaf->get_name();
    manifest += "[" + section + "]\n";
    // Empty vector options print as "{}", which does not parse back; leaving them out keeps the empty default.
    std::istringstream lines(leaf->config_to_str(true, false));
    for (std::string line; std::getline(lines, line);)
      if (!line.ends_with("=\"{}\"")) manifest += line + "\n";
  }
  try {
    if (s_slq->parsed()) return cmd_slq(slq, manifest, out);
    if (s_hm->parsed()) return cmd_heatmap(hm, manifest, out);
    if (s_q->parsed()) return cmd_quad(qd, manifest, out);
    if (s_bd->parsed()) return cmd_blockdiag(bd, manifest, out);
    if (s_sc->parsed()) return cmd_scaling(sc, manifest, out);
    if (s_sn->parsed()) return cmd_slq_net(sn, manifest, out);
    err << "hetlab: no command given\n";
    return kExitUsage;
  } catch (const InputError& e) {
    err << "hetlab: error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const NumericalError& e) {
    err << "hetlab: numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const json::exception& e) {
    err << "hetlab: error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const fs::filesystem_error& e) {
    err << "hetlab: error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::invalid_argument& e) {
    err << "hetlab: error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "hetlab: failure: " << e.what() << "\n";
    return kExitNumerical;
  }
}

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace hetlab::cli
