#pragma once

#include "hetlab/common.hpp"

#include <Eigen/Dense>

#include <atomic>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

namespace hetlab {

/// Contiguous, ordered, disjoint index ranges covering [0, dim). Block numbers are 0-based in the
/// API; files and the CLI use 1-based inclusive ranges.
class BlockPartition {
 public:
  struct Range {
    Index start = 0;
    Index size = 0;
    Index end() const { return start + size; }
  };

  BlockPartition() = default;

  explicit BlockPartition(std::vector<Range> ranges) : ranges_(std::move(ranges)) {
    if (ranges_.empty()) throw InputError("partition: no blocks");
    Index next = 0;
    for (std::size_t l = 0; l < ranges_.size(); ++l) {
      if (ranges_[l].size <= 0)
        throw InputError("partition: block " + std::to_string(l + 1) + " is empty");
      if (ranges_[l].start != next)
        throw InputError("partition: block " + std::to_string(l + 1) +
                         " does not start where the previous block ends");
      next = ranges_[l].end();
    }
    dim_ = next;
  }

  static BlockPartition from_sizes(const std::vector<Index>& sizes) {
    std::vector<Range> r;
    Index start = 0;
    for (Index s : sizes) {
      r.push_back({start, s});
      start += s;
    }
    return BlockPartition(std::move(r));
  }

  static BlockPartition single(Index dim) { return from_sizes({dim}); }

  Index dim() const { return dim_; }
  std::size_t num_blocks() const { return ranges_.size(); }
  const Range& range(std::size_t l) const {
    if (l >= ranges_.size())
      throw InputError("block index " + std::to_string(l) + " out of range (have " +
                       std::to_string(ranges_.size()) + " blocks)");
    return ranges_[l];
  }
  const std::vector<Range>& ranges() const { return ranges_; }
  std::vector<Index> sizes() const {
    std::vector<Index> s;
    for (const auto& r : ranges_) s.push_back(r.size);
    return s;
  }

 private:
  std::vector<Range> ranges_;
  Index dim_ = 0;
};

/// Dense symmetric matrix with exact entry symmetry.
template <typename Scalar = double>
class DenseSymmetric {
 public:
  using Matrix = MatrixX<Scalar>;

  DenseSymmetric() = default;

  /// Rejects anything that is not square and exactly symmetric.
  explicit DenseSymmetric(Matrix m) : m_(std::move(m)) {
    if (m_.rows() != m_.cols()) throw InputError("dense matrix is not square");
    if (m_.rows() == 0) throw InputError("dense matrix is empty");
    for (Index j = 0; j < m_.cols(); ++j)
      for (Index i = j + 1; i < m_.rows(); ++i)
        if (m_(i, j) != m_(j, i))
          throw InputError("dense matrix is not symmetric at (" + std::to_string(i + 1) + ", " +
                           std::to_string(j + 1) + ")");
  }

  static DenseSymmetric symmetrized(const Matrix& m) {
    if (m.rows() != m.cols()) throw InputError("dense matrix is not square");
    Matrix s = (m + m.transpose()) * Scalar(0.5);
    return DenseSymmetric(std::move(s));
  }

  Index dim() const { return m_.rows(); }
  const Matrix& matrix() const { return m_; }
  Scalar operator()(Index i, Index j) const { return m_(i, j); }

 private:
  Matrix m_;
};

/// Matrix-free symmetric linear map. Immutable after construction; apply() may be called
/// concurrently. Copies share the apply counter.
template <typename Scalar = double>
class SymmetricOperator {
 public:
  using Vector = VectorX<Scalar>;
  using Matrix = MatrixX<Scalar>;
  using ApplyFn = std::function<Vector(const Vector&)>;

  SymmetricOperator(Index dim, ApplyFn fn)
      : dim_(dim), fn_(std::move(fn)), counter_(std::make_shared<std::atomic<std::size_t>>(0)) {
    if (dim <= 0) throw InputError("operator dimension must be positive");
    if (!fn_) throw InputError("operator apply function is empty");
  }

  static SymmetricOperator dense(DenseSymmetric<Scalar> a) {
    auto storage = std::make_shared<const DenseSymmetric<Scalar>>(std::move(a));
    SymmetricOperator op(storage->dim(),
                         [storage](const Vector& v) -> Vector { return storage->matrix() * v; });
    op.dense_ = storage;
    return op;
  }

  static SymmetricOperator diagonal(Vector d) {
    const Index n = d.size();
    auto diag = std::make_shared<const Vector>(std::move(d));
    Matrix m = diag->asDiagonal();
    SymmetricOperator op(n, [diag](const Vector& v) -> Vector { return diag->cwiseProduct(v); });
    op.dense_ = std::make_shared<const DenseSymmetric<Scalar>>(std::move(m));
    return op;
  }

  static SymmetricOperator identity(Index n) { return diagonal(Vector::Ones(n)); }

  Index dim() const { return dim_; }

  /// True when the operator is backed by explicit dense storage.
  bool exact() const { return static_cast<bool>(dense_); }
  const DenseSymmetric<Scalar>* dense_storage() const { return dense_.get(); }

  Vector apply(const Vector& v) const {
    if (v.size() != dim_)
      throw InputError("apply: vector has length " + std::to_string(v.size()) +
                       " but operator dimension is " + std::to_string(dim_));
    counter_->fetch_add(1, std::memory_order_relaxed);
    Vector out = fn_(v);
    if (out.size() != dim_) throw NumericalError("apply: operator returned a vector of wrong length");
    return out;
  }

  Vector operator*(const Vector& v) const { return apply(v); }

  std::size_t apply_count() const { return counter_->load(std::memory_order_relaxed); }

  /// Dense realization, either the stored matrix or one apply per unit vector.
  Matrix to_dense() const {
    if (dense_) return dense_->matrix();
    Matrix m(dim_, dim_);
    Vector e = Vector::Zero(dim_);
    for (Index j = 0; j < dim_; ++j) {
      e[j] = Scalar(1);
      m.col(j) = apply(e);
      e[j] = Scalar(0);
    }
    return m;
  }

 private:
  Index dim_;
  ApplyFn fn_;
  std::shared_ptr<std::atomic<std::size_t>> counter_;
  std::shared_ptr<const DenseSymmetric<Scalar>> dense_;
};

/// Principal block P_l A P_l^T. Matrix-free operators get pad-apply-project; dense operators
/// get the explicit submatrix.
template <typename Scalar>
SymmetricOperator<Scalar> block_restrict(const SymmetricOperator<Scalar>& op, const BlockPartition& part,
                                         std::size_t l) {
  if (part.dim() != op.dim())
    throw InputError("block_restrict: partition covers " + std::to_string(part.dim()) +
                     " indices but operator dimension is " + std::to_string(op.dim()));
  const auto range = part.range(l);
  if (const auto* d = op.dense_storage()) {
    MatrixX<Scalar> sub = d->matrix().block(range.start, range.start, range.size, range.size);
    return SymmetricOperator<Scalar>::dense(DenseSymmetric<Scalar>(std::move(sub)));
  }
  const Index full = op.dim();
  return SymmetricOperator<Scalar>(range.size, [op, range, full](const VectorX<Scalar>& v) {
    VectorX<Scalar> padded = VectorX<Scalar>::Zero(full);
    padded.segment(range.start, range.size) = v;
    return VectorX<Scalar>(op.apply(padded).segment(range.start, range.size));
  });
}

template <typename Scalar>
SymmetricOperator<Scalar> make_block_diagonal(const std::vector<DenseSymmetric<Scalar>>& blocks) {
  if (blocks.empty()) throw InputError("make_block_diagonal: empty block list");
  Index n = 0;
  for (const auto& b : blocks) n += b.dim();
  MatrixX<Scalar> m = MatrixX<Scalar>::Zero(n, n);
  Index at = 0;
  for (const auto& b : blocks) {
    m.block(at, at, b.dim(), b.dim()) = b.matrix();
    at += b.dim();
  }
  return SymmetricOperator<Scalar>::dense(DenseSymmetric<Scalar>(std::move(m)));
}

/// Largest |<u, A v> - <v, A u>| / (|u||v||A|_est) over random probe pairs; |A|_est is the
/// largest |A x|/|x| seen on the probes.
template <typename Scalar>
double symmetry_defect(const SymmetricOperator<Scalar>& op, int pairs, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "symmetry"));
  double worst = 0.0;
  for (int k = 0; k < pairs; ++k) {
    VectorX<Scalar> u = gaussian_vector<Scalar>(op.dim(), rng);
    VectorX<Scalar> v = gaussian_vector<Scalar>(op.dim(), rng);
    VectorX<Scalar> au = op.apply(u), av = op.apply(v);
    double norm_est = std::max(static_cast<double>(au.norm() / u.norm()),
                               static_cast<double>(av.norm() / v.norm()));
    double scale = static_cast<double>(u.norm() * v.norm()) * std::max(norm_est, 1e-300);
    double defect = std::abs(static_cast<double>(u.dot(av) - v.dot(au))) / scale;
    worst = std::max(worst, defect);
  }
  return worst;
}

}  // namespace hetlab
