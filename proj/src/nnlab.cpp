#include "hetlab/nnlab.hpp"

#include "hetlab/io.hpp"
#include "hetlab/spectra.hpp"

#include <cmath>
#include <fstream>
#include <numeric>

namespace hetlab {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using nlohmann::json;
using RowMajorMap = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using RowMajorMutMap = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

Activation activation_from_string(const std::string& s) {
  if (s == "tanh") return Activation::Tanh;
  if (s == "relu") return Activation::Relu;
  if (s == "identity" || s == "linear") return Activation::Identity;
  throw InputError("unknown activation '" + s + "' (expected tanh, relu or identity)");
}

std::string to_string(Activation a) {
  switch (a) {
    case Activation::Tanh: return "tanh";
    case Activation::Relu: return "relu";
    default: return "identity";
  }
}

OptimizerKind optimizer_from_string(const std::string& s) {
  if (s == "sgd") return OptimizerKind::SGD;
  if (s == "adamw") return OptimizerKind::AdamW;
  if (s == "adam-no-bias" || s == "adamnobias") return OptimizerKind::AdamNoBias;
  throw InputError("unknown optimizer '" + s + "' (expected sgd, adamw or adam-no-bias)");
}

std::string to_string(OptimizerKind k) {
  switch (k) {
    case OptimizerKind::SGD: return "sgd";
    case OptimizerKind::AdamW: return "adamw";
    default: return "adam-no-bias";
  }
}

MlpModel MlpModel::make(std::vector<Index> widths, Activation hidden, double scale, bool bias, LossKind loss) {
  MlpModel m;
  m.widths = std::move(widths);
  if (m.widths.size() < 2) throw InputError("model needs an input and an output width");
  m.activations.assign(m.widths.size() - 1, hidden);
  m.activations.back() = Activation::Identity;
  m.scale = scale;
  m.bias = bias;
  m.loss = loss;
  m.validate();
  return m;
}

void MlpModel::validate() const {
  if (widths.size() < 2) throw InputError("model needs an input and an output width");
  for (Index w : widths)
    if (w < 1) throw InputError("layer widths must be positive");
  if (activations.size() != widths.size() - 1) throw InputError("need one activation per layer");
  if (!(scale > 0.0) || !std::isfinite(scale)) throw InputError("layer scale must be positive");
  if ((loss == LossKind::BinaryLogistic || loss == LossKind::SquaredError) && widths.back() != 1)
    throw InputError("binary logistic and squared-error heads need a single output");
}

Index MlpModel::weight_offset(std::size_t k) const {
  Index off = 0;
  for (std::size_t j = 0; j < k; ++j) off += fan_out(j) * (fan_in(j) + (bias ? 1 : 0));
  return off;
}

Index MlpModel::bias_offset(std::size_t k) const { return weight_offset(k) + fan_out(k) * fan_in(k); }

Index MlpModel::num_params() const { return weight_offset(num_layers()); }

BlockPartition MlpModel::partition() const {
  std::vector<Index> sizes;
  for (std::size_t k = 0; k < num_layers(); ++k) {
    sizes.push_back(fan_out(k) * fan_in(k));
    if (bias) sizes.push_back(fan_out(k));
  }
  return BlockPartition::from_sizes(sizes);
}

std::vector<std::string> MlpModel::block_labels() const {
  std::vector<std::string> out;
  for (std::size_t k = 0; k < num_layers(); ++k) {
    out.push_back("layer" + std::to_string(k + 1) + ".weight");
    if (bias) out.push_back("layer" + std::to_string(k + 1) + ".bias");
  }
  return out;
}

BlockPartition neuron_partition(const MlpModel& m) {
  if (m.num_layers() != 2 || m.bias) throw InputError("neuron partition needs a one-hidden-layer model without bias");
  std::vector<Index> sizes(static_cast<std::size_t>(m.widths[1]), m.widths[0]);
  sizes.push_back(m.widths[1] * m.widths[2]);
  return BlockPartition::from_sizes(sizes);
}

Dataset Dataset::subset(const std::vector<Index>& rows) const {
  Dataset out;
  out.x.resize(static_cast<Index>(rows.size()), dim());
  out.num_classes = num_classes;
  out.provenance = provenance;
  if (targets.size() > 0) out.targets.resize(static_cast<Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const Index r = rows[i];
    if (r < 0 || r >= size()) throw InputError("subset row out of range");
    out.x.row(static_cast<Index>(i)) = x.row(r);
    out.labels.push_back(labels[static_cast<std::size_t>(r)]);
    if (targets.size() > 0) out.targets[static_cast<Index>(i)] = targets[r];
  }
  return out;
}

void Dataset::validate() const {
  if (size() < 1) throw InputError("dataset is empty");
  if (static_cast<Index>(labels.size()) != size()) throw InputError("dataset has a label count mismatch");
  for (int y : labels)
    if (y < 0 || y >= num_classes) throw InputError("label " + std::to_string(y) + " outside [0, classes)");
  if (targets.size() != 0 && targets.size() != size()) throw InputError("dataset has a target count mismatch");
}

Dataset generate_cluster_data(int n_per_class, int n_classes, Index dim, std::uint64_t seed) {
  if (n_per_class < 1 || n_classes < 1 || dim < 1) throw InputError("cluster data counts must be positive");
  Rng rng(derive_seed(seed, "cluster-data"));
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  Dataset d;
  d.x.resize(static_cast<Index>(n_per_class) * n_classes, dim);
  d.num_classes = n_classes;
  Index row = 0;
  for (int c = 0; c < n_classes; ++c) {
    VectorXd center(dim);
    for (Index k = 0; k < dim; ++k) center[k] = unif(rng) * 10.0;
    for (int s = 0; s < n_per_class; ++s, ++row) {
      for (Index k = 0; k < dim; ++k) d.x(row, k) = normal(rng) * 0.5 + center[k];
      d.labels.push_back(c);
    }
  }
  d.provenance = "cluster(n_per_class=" + std::to_string(n_per_class) + ", classes=" + std::to_string(n_classes) +
                 ", dim=" + std::to_string(dim) + ", seed=" + std::to_string(seed) + ")";
  return d;
}

namespace {

std::vector<unsigned char> read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw InputError("cannot open '" + p.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t be32(const std::vector<unsigned char>& b, std::size_t at) {
  return (std::uint32_t{b[at]} << 24) | (std::uint32_t{b[at + 1]} << 16) | (std::uint32_t{b[at + 2]} << 8) |
         std::uint32_t{b[at + 3]};
}

}  // namespace

Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels) {
  const auto img = read_bytes(images);
  const auto lab = read_bytes(labels);
  if (img.size() >= 4 && be32(img, 0) != 0x00000803u)
    throw InputError(images.string() + ": bad magic for an IDX image file");
  if (lab.size() >= 4 && be32(lab, 0) != 0x00000801u)
    throw InputError(labels.string() + ": bad magic for an IDX label file");
  if (img.size() < 16) throw InputError(images.string() + ": truncated payload (header incomplete)");
  if (lab.size() < 8) throw InputError(labels.string() + ": truncated payload (header incomplete)");
  const std::uint64_t n = be32(img, 4), rows = be32(img, 8), cols = be32(img, 12);
  const std::uint64_t nl = be32(lab, 4);
  if (img.size() < 16 + n * rows * cols) throw InputError(images.string() + ": truncated payload");
  if (lab.size() < 8 + nl) throw InputError(labels.string() + ": truncated payload");
  if (n != nl)
    throw InputError("count mismatch: " + std::to_string(n) + " images but " + std::to_string(nl) + " labels");
  Dataset d;
  const Index dim = static_cast<Index>(rows * cols);
  d.x.resize(static_cast<Index>(n), dim);
  int max_label = 0;
  for (std::uint64_t i = 0; i < n; ++i) {
    for (Index k = 0; k < dim; ++k) d.x(static_cast<Index>(i), k) = img[16 + i * rows * cols + k] / 255.0;
    d.labels.push_back(lab[8 + i]);
    max_label = std::max(max_label, d.labels.back());
  }
  d.num_classes = max_label + 1;
  d.provenance = images.string() + "," + labels.string();
  return d;
}

std::pair<Dataset, Dataset> train_test_split(const Dataset& d, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw InputError("test fraction must lie in (0, 1)");
  std::vector<Index> idx(static_cast<std::size_t>(d.size()));
  std::iota(idx.begin(), idx.end(), Index{0});
  Rng rng(derive_seed(seed, "split"));
  std::shuffle(idx.begin(), idx.end(), rng);
  const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(d.size())));
  if (n_test == 0 || n_test >= idx.size()) throw InputError("split leaves an empty part");
  std::vector<Index> test(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_test));
  std::vector<Index> train(idx.begin() + static_cast<std::ptrdiff_t>(n_test), idx.end());
  return {d.subset(train), d.subset(test)};
}

VectorXd init_params(const MlpModel& m, std::uint64_t seed) {
  m.validate();
  Rng rng(derive_seed(seed, "mlp-init"));
  VectorXd w(m.num_params());
  for (std::size_t k = 0; k < m.num_layers(); ++k) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(m.fan_in(k)));
    std::uniform_real_distribution<double> unif(-bound, bound);
    const Index n = m.fan_out(k) * (m.fan_in(k) + (m.bias ? 1 : 0));
    for (Index i = 0; i < n; ++i) w[m.weight_offset(k) + i] = unif(rng);
  }
  return w;
}

namespace {

MatrixXd act(Activation a, const MatrixXd& z) {
  switch (a) {
    case Activation::Tanh: return z.array().tanh().matrix();
    case Activation::Relu: return z.cwiseMax(0.0);
    default: return z;
  }
}

MatrixXd act_d1(Activation a, const MatrixXd& z) {
  switch (a) {
    case Activation::Tanh: return (1.0 - z.array().tanh().square()).matrix();
    case Activation::Relu: return (z.array() > 0.0).cast<double>().matrix();
    default: return MatrixXd::Ones(z.rows(), z.cols());
  }
}

MatrixXd act_d2(Activation a, const MatrixXd& z) {
  if (a == Activation::Tanh) {
    const auto t = z.array().tanh();
    return (-2.0 * t * (1.0 - t.square())).matrix();
  }
  return MatrixXd::Zero(z.rows(), z.cols());
}

struct Cache {
  std::vector<MatrixXd> z;  // z[k] for layer k (0-based)
  std::vector<MatrixXd> a;  // a[0] = input, a[k+1] = phi(z[k])
};

RowMajorMap weights(const MlpModel& m, const VectorXd& w, std::size_t k) {
  return RowMajorMap(w.data() + m.weight_offset(k), m.fan_out(k), m.fan_in(k));
}

Cache run_forward(const MlpModel& m, const MatrixXd& x, const VectorXd& w) {
  if (w.size() != m.num_params())
    throw InputError("parameter vector has length " + std::to_string(w.size()) + ", model has " +
                     std::to_string(m.num_params()));
  if (x.cols() != m.widths.front())
    throw InputError("input dimension " + std::to_string(x.cols()) + " does not match model input width " +
                     std::to_string(m.widths.front()));
  Cache c;
  c.a.push_back(x.transpose());
  for (std::size_t k = 0; k < m.num_layers(); ++k) {
    MatrixXd z = weights(m, w, k) * c.a.back();
    if (m.bias) z.colwise() += w.segment(m.bias_offset(k), m.fan_out(k));
    z *= m.scale;
    c.a.push_back(act(m.activations[k], z));
    c.z.push_back(std::move(z));
  }
  return c;
}

double sigmoid(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }
double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double label_sign(int y) { return y == 1 ? 1.0 : -1.0; }

// Loss, dLoss/dz_L (already divided by n) and, for the HVP, the per-sample head curvature.
struct Head {
  double loss = 0.0;
  MatrixXd delta;
  MatrixXd probs;   // softmax probabilities (softmax head)
  VectorXd curv;    // d^2 loss / df^2 per sample, divided by n (scalar heads)
};

Head head(const MlpModel& m, const Dataset& d, const MatrixXd& out) {
  const Index n = d.size();
  const double inv_n = 1.0 / static_cast<double>(n);
  Head h;
  h.delta.resize(out.rows(), n);
  switch (m.loss) {
    case LossKind::SoftmaxCrossEntropy: {
      if (out.rows() < d.num_classes) throw InputError("model has fewer outputs than the data has classes");
      h.probs.resize(out.rows(), n);
      for (Index i = 0; i < n; ++i) {
        const double mx = out.col(i).maxCoeff();
        const VectorXd e = (out.col(i).array() - mx).exp().matrix();
        const double s = e.sum();
        h.probs.col(i) = e / s;
        const int y = d.labels[static_cast<std::size_t>(i)];
        h.loss += (std::log(s) + mx - out(y, i));
        h.delta.col(i) = h.probs.col(i);
        h.delta(y, i) -= 1.0;
      }
      break;
    }
    case LossKind::BinaryLogistic: {
      if (d.num_classes != 2) throw InputError("binary logistic head needs two classes");
      h.curv.resize(n);
      for (Index i = 0; i < n; ++i) {
        const double y = label_sign(d.labels[static_cast<std::size_t>(i)]);
        const double f = out(0, i);
        h.loss += softplus(-y * f);
        h.delta(0, i) = -y * sigmoid(-y * f);
        h.curv[i] = sigmoid(y * f) * sigmoid(-y * f) * inv_n;
      }
      break;
    }
    case LossKind::SquaredError: {
      if (d.targets.size() != n) throw InputError("squared-error head needs regression targets");
      h.curv = VectorXd::Constant(n, inv_n);
      for (Index i = 0; i < n; ++i) {
        const double r = out(0, i) - d.targets[i];
        h.loss += 0.5 * r * r;
        h.delta(0, i) = r;
      }
      break;
    }
  }
  h.loss *= inv_n;
  h.delta *= inv_n;
  return h;
}

VectorXd backward(const MlpModel& m, const VectorXd& w, const Cache& c, MatrixXd delta) {
  VectorXd g(m.num_params());
  for (std::size_t k = m.num_layers(); k-- > 0;) {
    RowMajorMutMap(g.data() + m.weight_offset(k), m.fan_out(k), m.fan_in(k)) = m.scale * delta * c.a[k].transpose();
    if (m.bias) g.segment(m.bias_offset(k), m.fan_out(k)) = m.scale * delta.rowwise().sum();
    if (k > 0) {
      MatrixXd da = m.scale * (weights(m, w, k).transpose() * delta);
      delta = da.cwiseProduct(act_d1(m.activations[k - 1], c.z[k - 1]));
    }
  }
  return g;
}

}  // namespace

MatrixXd forward(const MlpModel& m, const MatrixXd& x, const VectorXd& w) { return run_forward(m, x, w).z.back(); }

LossGrad loss_grad(const MlpModel& m, const Dataset& d, const VectorXd& w) {
  m.validate();
  d.validate();
  const Cache c = run_forward(m, d.x, w);
  Head h = head(m, d, c.z.back());
  return {h.loss, backward(m, w, c, std::move(h.delta))};
}

double loss_value(const MlpModel& m, const Dataset& d, const VectorXd& w) {
  d.validate();
  return head(m, d, run_forward(m, d.x, w).z.back()).loss;
}

VectorXd hvp(const MlpModel& m, const Dataset& d, const VectorXd& w, const VectorXd& v) {
  m.validate();
  d.validate();
  if (v.size() != m.num_params()) throw InputError("hvp: direction has wrong length");
  const Cache c = run_forward(m, d.x, w);
  const Head h = head(m, d, c.z.back());
  const std::size_t layers = m.num_layers();

  // Forward pass of directional derivatives R{z_k}, R{a_k}.
  std::vector<MatrixXd> rz(layers), ra(layers + 1);
  ra[0] = MatrixXd::Zero(c.a[0].rows(), c.a[0].cols());
  for (std::size_t k = 0; k < layers; ++k) {
    MatrixXd z = weights(m, v, k) * c.a[k] + weights(m, w, k) * ra[k];
    if (m.bias) z.colwise() += v.segment(m.bias_offset(k), m.fan_out(k));
    rz[k] = m.scale * z;
    ra[k + 1] = act_d1(m.activations[k], c.z[k]).cwiseProduct(rz[k]);
  }

  // R{delta_L}: head curvature applied to R{z_L}.
  const MatrixXd& r_out = rz.back();
  MatrixXd rdelta(r_out.rows(), r_out.cols());
  if (m.loss == LossKind::SoftmaxCrossEntropy) {
    const double inv_n = 1.0 / static_cast<double>(d.size());
    for (Index i = 0; i < r_out.cols(); ++i) {
      const VectorXd pr = h.probs.col(i).cwiseProduct(r_out.col(i));
      rdelta.col(i) = (pr - h.probs.col(i) * pr.sum()) * inv_n;
    }
  } else {
    rdelta = r_out.cwiseProduct(h.curv.transpose());
  }

  VectorXd out(m.num_params());
  MatrixXd delta = h.delta;
  for (std::size_t k = layers; k-- > 0;) {
    RowMajorMutMap(out.data() + m.weight_offset(k), m.fan_out(k), m.fan_in(k)) =
        m.scale * (rdelta * c.a[k].transpose() + delta * ra[k].transpose());
    if (m.bias) out.segment(m.bias_offset(k), m.fan_out(k)) = m.scale * rdelta.rowwise().sum();
    if (k > 0) {
      const MatrixXd da = m.scale * (weights(m, w, k).transpose() * delta);
      const MatrixXd rda = m.scale * (weights(m, v, k).transpose() * delta + weights(m, w, k).transpose() * rdelta);
      const MatrixXd d1 = act_d1(m.activations[k - 1], c.z[k - 1]);
      const MatrixXd d2 = act_d2(m.activations[k - 1], c.z[k - 1]);
      delta = da.cwiseProduct(d1);
      rdelta = rda.cwiseProduct(d1) + da.cwiseProduct(d2).cwiseProduct(rz[k - 1]);
    }
  }
  return out;
}

SymmetricOperator<double> hessian_operator(const MlpModel& m, const Dataset& d, const VectorXd& w) {
  m.validate();
  d.validate();
  if (w.size() != m.num_params()) throw InputError("parameter vector has wrong length");
  return SymmetricOperator<double>(m.num_params(), [m, d, w](const VectorXd& v) { return hvp(m, d, w, v); });
}

DenseSymmetric<double> exact_hessian_small(const MlpModel& m, const Dataset& d, const VectorXd& w, double step,
                                           unsigned workers) {
  const Index p = m.num_params();
  if (p > kExactHessianMaxParams)
    throw InputError("exact Hessian guard: model has " + std::to_string(p) + " parameters, limit is " +
                     std::to_string(kExactHessianMaxParams));
  if (w.size() != p) throw InputError("parameter vector has wrong length");
  if (!(step > 0.0)) throw InputError("difference step must be positive");
  MatrixXd h(p, p);
  parallel_for(static_cast<std::size_t>(p), workers, [&](std::size_t j) {
    VectorXd wp = w, wm = w;
    wp[static_cast<Index>(j)] += step;
    wm[static_cast<Index>(j)] -= step;
    h.col(static_cast<Index>(j)) = (loss_grad(m, d, wp).grad - loss_grad(m, d, wm).grad) / (2.0 * step);
  });
  const double norm = h.norm();
  const double asym = (h - h.transpose()).norm();
  if (norm > 0.0 && asym > 1e-6 * norm)
    throw NumericalError("finite-difference Hessian is asymmetric (relative defect " + std::to_string(asym / norm) +
                         ")");
  return DenseSymmetric<double>::symmetrized(h);
}

double block_dominance(const DenseSymmetric<double>& h, const BlockPartition& part) {
  if (part.dim() != h.dim()) throw InputError("partition does not cover the matrix");
  const double total = h.matrix().squaredNorm();
  if (total == 0.0) return 1.0;
  double inside = 0.0;
  for (const auto& r : part.ranges()) inside += h.matrix().block(r.start, r.start, r.size, r.size).squaredNorm();
  return inside / total;
}

MatrixXd eq1_offdiag_block(const MlpModel& m, const Dataset& d, const VectorXd& w, Index i, Index j) {
  if (m.num_layers() != 2 || m.bias || m.loss != LossKind::BinaryLogistic || m.widths[2] != 1)
    throw InputError("formula applies to the one-hidden-layer binary model without bias");
  const Index width = m.widths[1];
  if (i < 0 || j < 0 || i >= width || j >= width || i == j) throw InputError("need two distinct neuron indices");
  d.validate();
  const Index dim = m.widths[0];
  const auto wmat = weights(m, w, 0);
  const auto v = weights(m, w, 1);
  auto dphi = [&](double u) {
    return m.activations[0] == Activation::Tanh ? 1.0 - std::tanh(u) * std::tanh(u)
           : m.activations[0] == Activation::Relu ? (u > 0.0 ? 1.0 : 0.0)
                                                  : 1.0;
  };
  MatrixXd out = MatrixXd::Zero(dim, dim);
  const MatrixXd f = forward(m, d.x, w);
  for (Index s = 0; s < d.size(); ++s) {
    const VectorXd x = d.x.row(s).transpose();
    const double p = sigmoid(label_sign(d.labels[static_cast<std::size_t>(s)]) * f(0, s));
    const double coef = p * (1.0 - p) * v(0, i) * v(0, j) * dphi(m.scale * wmat.row(i).dot(x)) *
                        dphi(m.scale * wmat.row(j).dot(x)) * m.scale * m.scale * m.scale * m.scale;
    out.noalias() += coef * x * x.transpose();
  }
  return out / static_cast<double>(d.size());
}

double accuracy(const MlpModel& m, const Dataset& d, const VectorXd& w) {
  d.validate();
  const MatrixXd out = forward(m, d.x, w);
  Index correct = 0;
  for (Index i = 0; i < d.size(); ++i) {
    int pred = 0;
    if (out.rows() == 1)
      pred = out(0, i) > 0.0 ? 1 : 0;
    else
      out.col(i).maxCoeff(&pred);
    if (pred == d.labels[static_cast<std::size_t>(i)]) ++correct;
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(d.size());
}

void TrainerSpec::validate() const {
  if (!(eta > 0.0)) throw InputError("learning rate must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw InputError("beta1 must lie in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) throw InputError("beta2 must lie in [0, 1)");
  if (!(eps >= 0.0)) throw InputError("eps must be non-negative");
  if (!(weight_decay >= 0.0)) throw InputError("weight decay must be non-negative");
  if (batch_size < 1) throw InputError("batch size must be positive");
  if (steps < 0) throw InputError("step count must be non-negative");
  if (eval_every < 0) throw InputError("eval_every must be non-negative");
}

TrainResult train(const MlpModel& m, const Dataset& d, const TrainerSpec& spec, const VectorXd& w0,
                  const std::function<void(long, const VectorXd&)>& on_step) {
  spec.validate();
  m.validate();
  d.validate();
  if (w0.size() != m.num_params()) throw InputError("initial parameters have wrong length");
  if (spec.batch_size > d.size())
    throw InputError("batch size " + std::to_string(spec.batch_size) + " exceeds dataset size " +
                     std::to_string(d.size()));
  const bool full = spec.batch_size == d.size();
  Rng rng(derive_seed(spec.seed, "minibatch"));
  std::vector<Index> idx(static_cast<std::size_t>(d.size()));
  std::iota(idx.begin(), idx.end(), Index{0});

  TrainResult res;
  VectorXd w = w0;
  VectorXd mom = VectorXd::Zero(w.size()), vel = VectorXd::Zero(w.size());
  for (long t = 1; t <= spec.steps; ++t) {
    LossGrad lg;
    if (full) {
      lg = loss_grad(m, d, w);
    } else {
      for (Index i = 0; i < spec.batch_size; ++i) {
        std::uniform_int_distribution<Index> pick(i, d.size() - 1);
        std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(pick(rng))]);
      }
      lg = loss_grad(m, d.subset(std::vector<Index>(idx.begin(), idx.begin() + spec.batch_size)), w);
    }
    if (!std::isfinite(lg.loss) || !lg.grad.allFinite())
      throw NumericalError(to_string(spec.optimizer) + " at eta=" + io::format_double(spec.eta) +
                           ": non-finite loss at step " + std::to_string(t) +
                           " (last parameter norm " + io::format_double(w.norm()) + ")");
    const VectorXd& g = lg.grad;
    switch (spec.optimizer) {
      case OptimizerKind::SGD:
        mom = spec.beta1 * mom + g;
        w -= spec.eta * mom;
        break;
      case OptimizerKind::AdamW: {
        w -= spec.eta * spec.weight_decay * w;
        mom = spec.beta1 * mom + (1.0 - spec.beta1) * g;
        vel = spec.beta2 * vel + (1.0 - spec.beta2) * g.cwiseAbs2();
        const VectorXd mhat = mom / (1.0 - std::pow(spec.beta1, static_cast<double>(t)));
        const VectorXd vhat = vel / (1.0 - std::pow(spec.beta2, static_cast<double>(t)));
        w -= spec.eta * mhat.cwiseQuotient((vhat.cwiseSqrt().array() + spec.eps).matrix());
        break;
      }
      case OptimizerKind::AdamNoBias: {
        if (t == 1) {  // initialized from the first minibatch gradient
          mom = g;
          vel = g.cwiseAbs2();
        }
        mom = spec.beta1 * mom + (1.0 - spec.beta1) * g;
        vel = spec.beta2 * vel + (1.0 - spec.beta2) * g.cwiseAbs2();
        VectorXd denom = (vel.cwiseSqrt().array() + spec.eps).matrix();
        for (Index i = 0; i < w.size(); ++i)
          if (denom[i] > 0.0) w[i] -= spec.eta * mom[i] / denom[i];
        break;
      }
    }
    StepMetrics sm;
    sm.step = t;
    sm.loss = lg.loss;
    if ((spec.eval_every > 0 && t % spec.eval_every == 0) || t == spec.steps) sm.train_accuracy = accuracy(m, d, w);
    res.metrics.push_back(sm);
    if (on_step) on_step(t, w);
  }
  if (!w.allFinite()) throw NumericalError(to_string(spec.optimizer) + ": parameters became non-finite");
  res.w = w;
  return res;
}

double init_js0(const MlpModel& m, const Dataset& train, const VectorXd& w, Index samples, Index slq_steps,
                int probes, std::uint64_t seed) {
  std::vector<Index> rows(static_cast<std::size_t>(std::min(samples, train.size())));
  std::iota(rows.begin(), rows.end(), Index{0});
  const auto op = hessian_operator(m, train.subset(rows), w);
  ProbeConfig pc;
  pc.steps = slq_steps;
  pc.num_probes = probes;
  pc.seed = derive_seed(seed, "init-spectra");
  const auto ds = blockwise_densities(op, m.partition(), pc, m.block_labels());
  return heterogeneity_report(ds).js0;
}

ScalingTable heterogeneity_experiment(const ScalingConfig& cfg, const Dataset& train, const Dataset& test) {
  if (cfg.c_values.empty()) throw InputError("scaling experiment needs at least one c value");
  if (cfg.lr_grid.empty()) throw InputError("scaling experiment needs a non-empty learning-rate grid");
  train.validate();
  test.validate();
  std::vector<Index> widths{train.dim()};
  widths.insert(widths.end(), cfg.hidden.begin(), cfg.hidden.end());
  widths.push_back(train.num_classes);

  ScalingTable table;
  for (double c : cfg.c_values) {
    const MlpModel model = MlpModel::make(widths, Activation::Relu, c);
    const VectorXd w0 = init_params(model, derive_seed(cfg.seed, "scaling-init"));
    ScalingRow row;
    row.c = c;
    row.js0 = init_js0(model, train, w0, cfg.hessian_samples, cfg.slq_steps, cfg.slq_probes, cfg.seed);

    std::vector<ScalingCell> cells;
    for (OptimizerKind k : {OptimizerKind::SGD, OptimizerKind::AdamW})
      for (double eta : cfg.lr_grid) cells.push_back({c, k, eta, 0.0, false, {}});
    parallel_for(cells.size(), cfg.workers, [&](std::size_t i) {
      ScalingCell& cell = cells[i];
      TrainerSpec spec;
      spec.optimizer = cell.optimizer;
      spec.eta = cell.eta;
      spec.beta1 = cell.optimizer == OptimizerKind::SGD ? cfg.sgd_momentum : 0.9;
      spec.weight_decay = cell.optimizer == OptimizerKind::AdamW ? cfg.adamw_weight_decay : 0.0;
      spec.batch_size = std::min(cfg.batch_size, train.size());
      spec.steps = cfg.steps;
      spec.seed = derive_seed(cfg.seed, "scaling-batches");
      try {
        const auto res = hetlab::train(model, train, spec, w0);
        cell.test_accuracy = accuracy(model, test, res.w);
      } catch (const NumericalError& e) {
        cell.aborted = true;
        cell.error = e.what();
      }
    });
    bool have_sgd = false, have_adamw = false;
    for (const auto& cell : cells) {
      if (cell.aborted) continue;
      double& best = cell.optimizer == OptimizerKind::SGD ? row.best_sgd : row.best_adamw;
      double& best_eta = cell.optimizer == OptimizerKind::SGD ? row.best_sgd_eta : row.best_adamw_eta;
      bool& have = cell.optimizer == OptimizerKind::SGD ? have_sgd : have_adamw;
      if (!have || cell.test_accuracy > best) {
        best = cell.test_accuracy;
        best_eta = cell.eta;
        have = true;
      }
    }
    table.rows.push_back(row);
    table.cells.insert(table.cells.end(), cells.begin(), cells.end());
  }
  return table;
}

json to_json(const ScalingTable& t) {
  json rows = json::array(), cells = json::array();
  for (const auto& r : t.rows)
    rows.push_back({{"c", r.c},
                    {"best_sgd_accuracy", r.best_sgd},
                    {"best_sgd_eta", r.best_sgd_eta},
                    {"best_adamw_accuracy", r.best_adamw},
                    {"best_adamw_eta", r.best_adamw_eta},
                    {"js0", r.js0}});
  for (const auto& c : t.cells) {
    json j = {{"c", c.c}, {"optimizer", to_string(c.optimizer)}, {"eta", c.eta}, {"test_accuracy", c.test_accuracy},
              {"aborted", c.aborted}};
    if (c.aborted) j["error"] = c.error;
    cells.push_back(std::move(j));
  }
  return {{"rows", rows}, {"cells", cells}};
}

std::string scaling_csv(const ScalingTable& t) {
  std::string out = "c,best_sgd_accuracy,best_sgd_eta,best_adamw_accuracy,best_adamw_eta,js0\n";
  for (const auto& r : t.rows)
    out += io::format_double(r.c) + "," + io::format_double(r.best_sgd) + "," + io::format_double(r.best_sgd_eta) +
           "," + io::format_double(r.best_adamw) + "," + io::format_double(r.best_adamw_eta) + "," +
           io::format_double(r.js0) + "\n";
  return out;
}

}  // namespace hetlab
