#pragma once

#include "hetlab/common.hpp"
#include "hetlab/operator.hpp"
#include "hetlab/slq.hpp"

#include <Eigen/Core>
#include <json.hpp>

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace hetlab {

enum class Activation { Identity, Tanh, Relu };
enum class LossKind {
  SoftmaxCrossEntropy,  // multi-class, labels in [0, classes)
  BinaryLogistic,       // one output f, y = +1 for label 1 and -1 for label 0, loss log(1 + exp(-y f))
  SquaredError,         // one output f, loss (f - target)^2 / 2
};

Activation activation_from_string(const std::string& s);
std::string to_string(Activation a);

/// Fully connected network. Layer k computes z_k = c (W_k a_{k-1} + b_k), a_k = phi_k(z_k).
/// Parameters are laid out layer by layer: W_k row-major (one row per output unit), then b_k.
struct MlpModel {
  std::vector<Index> widths;             // input, hidden..., output
  std::vector<Activation> activations;   // one per layer; the output layer is usually Identity
  double scale = 1.0;                    // c, applied to every layer's pre-activation
  bool bias = true;
  LossKind loss = LossKind::SoftmaxCrossEntropy;

  /// Hidden layers share `hidden`; the output layer is linear.
  static MlpModel make(std::vector<Index> widths, Activation hidden, double scale = 1.0, bool bias = true,
                       LossKind loss = LossKind::SoftmaxCrossEntropy);

  std::size_t num_layers() const { return widths.size() - 1; }
  Index fan_in(std::size_t k) const { return widths[k]; }
  Index fan_out(std::size_t k) const { return widths[k + 1]; }
  Index weight_offset(std::size_t k) const;
  Index bias_offset(std::size_t k) const;  // only meaningful with bias
  Index num_params() const;

  /// One block per weight tensor and per bias tensor, in parameter order.
  BlockPartition partition() const;
  std::vector<std::string> block_labels() const;

  void validate() const;
};

/// For a one-hidden-layer model without bias: one block per hidden neuron's incoming weights w_i,
/// then one block with the output weights v.
BlockPartition neuron_partition(const MlpModel& m);

struct Dataset {
  Eigen::MatrixXd x;  // n x dim, one sample per row
  std::vector<int> labels;
  int num_classes = 0;
  Eigen::VectorXd targets;  // regression targets for SquaredError, else empty
  std::string provenance;

  Index size() const { return x.rows(); }
  Index dim() const { return x.cols(); }
  Dataset subset(const std::vector<Index>& rows) const;
  void validate() const;
};

/// Per class: center uniform in [0, 10)^dim, samples = center + 0.5 * standard normal.
Dataset generate_cluster_data(int n_per_class, int n_classes, Index dim, std::uint64_t seed);

/// IDX image/label pair (magics 0x00000803 and 0x00000801, big-endian). Pixels scaled to [0, 1].
Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels);

/// Seeded shuffled split; the test part has round(test_fraction * n) samples.
std::pair<Dataset, Dataset> train_test_split(const Dataset& d, double test_fraction, std::uint64_t seed);

/// Weights and biases uniform in +-1/sqrt(fan_in).
Eigen::VectorXd init_params(const MlpModel& m, std::uint64_t seed);

/// Network outputs z_L, one column per sample.
Eigen::MatrixXd forward(const MlpModel& m, const Eigen::MatrixXd& x, const Eigen::VectorXd& w);

struct LossGrad {
  double loss = 0.0;
  Eigen::VectorXd grad;
};

/// Mean loss over the data and its analytic gradient.
LossGrad loss_grad(const MlpModel& m, const Dataset& d, const Eigen::VectorXd& w);
double loss_value(const MlpModel& m, const Dataset& d, const Eigen::VectorXd& w);

/// Hessian-vector product by forward-over-backward differentiation (R-operator).
Eigen::VectorXd hvp(const MlpModel& m, const Dataset& d, const Eigen::VectorXd& w, const Eigen::VectorXd& v);

/// Hessian at w as a matrix-free operator. Copies the data and the point.
SymmetricOperator<double> hessian_operator(const MlpModel& m, const Dataset& d, const Eigen::VectorXd& w);

inline constexpr Index kExactHessianMaxParams = 2000;

/// Dense Hessian from central differences of the analytic gradient, symmetrized. Throws when the
/// model has more than kExactHessianMaxParams parameters or the raw difference matrix is
/// asymmetric beyond 1e-6 relative.
DenseSymmetric<double> exact_hessian_small(const MlpModel& m, const Dataset& d, const Eigen::VectorXd& w,
                                           double step = 1e-5, unsigned workers = 1);

/// Squared Frobenius mass of the principal blocks over that of the whole matrix.
double block_dominance(const DenseSymmetric<double>& h, const BlockPartition& part);

/// Off-diagonal neuron block d^2 L / dw_i dw_j (i != j, 0-based) of the one-hidden-layer binary
/// logistic model: mean over samples of p(1-p) v_i v_j phi'(w_i.x) phi'(w_j.x) x x^T.
Eigen::MatrixXd eq1_offdiag_block(const MlpModel& m, const Dataset& d, const Eigen::VectorXd& w, Index i, Index j);

/// Percentage of samples whose predicted class matches the label.
double accuracy(const MlpModel& m, const Dataset& d, const Eigen::VectorXd& w);

enum class OptimizerKind { SGD, AdamW, AdamNoBias };
OptimizerKind optimizer_from_string(const std::string& s);
std::string to_string(OptimizerKind k);

struct TrainerSpec {
  OptimizerKind optimizer = OptimizerKind::AdamW;
  double eta = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // AdamW only (decoupled)
  Index batch_size = 128;     // >= n means full batch
  long steps = 100;
  std::uint64_t seed = 0;
  long eval_every = 0;  // training accuracy every k steps (0: only after the last step)

  void validate() const;
};

struct StepMetrics {
  long step = 0;
  double loss = 0.0;                 // minibatch loss at w^t before the update
  std::optional<double> train_accuracy;  // on the full training set after the update
};

struct TrainResult {
  Eigen::VectorXd w;
  std::vector<StepMetrics> metrics;
};

/// SGD: m = beta1 m + g, w -= eta m. AdamW: decoupled decay then a bias-corrected Adam step.
/// AdamNoBias: m and v start from the first minibatch gradient, no bias correction.
/// Callback, when given, sees (step, w) after every update.
TrainResult train(const MlpModel& m, const Dataset& d, const TrainerSpec& spec, const Eigen::VectorXd& w0,
                  const std::function<void(long, const Eigen::VectorXd&)>& on_step = {});

struct ScalingConfig {
  std::vector<double> c_values{1.0, 10.0};
  std::vector<double> lr_grid{1e-4, 3e-4, 1e-3, 3e-3, 1e-2, 3e-2, 1e-1};
  std::vector<Index> hidden{300, 128, 64};
  Index batch_size = 128;
  long steps = 50;
  double sgd_momentum = 0.9;
  double adamw_weight_decay = 0.01;
  std::uint64_t seed = 0;
  // Blockwise spectra at initialization.
  Index hessian_samples = 128;
  Index slq_steps = 20;
  int slq_probes = 2;
  unsigned workers = 1;
};

struct ScalingCell {
  double c = 1.0;
  OptimizerKind optimizer = OptimizerKind::SGD;
  double eta = 0.0;
  double test_accuracy = 0.0;
  bool aborted = false;
  std::string error;
};

struct ScalingRow {
  double c = 1.0;
  double best_sgd = 0.0;
  double best_sgd_eta = 0.0;
  double best_adamw = 0.0;
  double best_adamw_eta = 0.0;
  double js0 = 0.0;
};

struct ScalingTable {
  std::vector<ScalingRow> rows;
  std::vector<ScalingCell> cells;
};

/// JS0 of the per-tensor blockwise Hessian spectra at w, on the first `samples` training points.
double init_js0(const MlpModel& m, const Dataset& train, const Eigen::VectorXd& w, Index samples, Index slq_steps,
                int probes, std::uint64_t seed);

/// For every c: relu MLP with the configured hidden widths and output scale c, JS0 at
/// initialization, and the best test accuracy of SGD and AdamW over the learning-rate grid.
ScalingTable heterogeneity_experiment(const ScalingConfig& cfg, const Dataset& train, const Dataset& test);

nlohmann::json to_json(const ScalingTable& t);
std::string scaling_csv(const ScalingTable& t);

}  // namespace hetlab
