#pragma once

#include <Eigen/Dense>
#include <functional>
#include <span>
#include <stdexcept>

#include "fancl/regularizers.hpp"

namespace fancl {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// U * diag(S) * V^T with orthonormal U, V and S descending. Rank 0 is the
// zero matrix of shape m x n.
struct FactoredMatrix {
  Matrix U;
  Vector S;
  Matrix V;
  Index m = 0;
  Index n = 0;

  FactoredMatrix() = default;
  FactoredMatrix(Matrix u, Vector s, Matrix v);
  static FactoredMatrix zero(Index m, Index n);

  Index rows() const { return m; }
  Index cols() const { return n; }
  Index rank() const { return S.size(); }
  Matrix dense() const;
};

enum class Axis { Rows, Cols };

using RangeFn = std::function<void(int slab, Index begin, Index end)>;
using SlabFn = std::function<void(int slab, std::span<const Index> indices)>;

// Execution backend for the thin-matrix and observed-entry kernels. The
// sequential engine runs every kernel as a single slab; the parallel engine
// splits work into one slab per thread. Slab results are combined by the
// caller in slab order.
class Engine {
 public:
  virtual ~Engine() = default;
  virtual int slabs() const { return 1; }
  // Contiguous ranges partitioning [0, count).
  virtual void for_ranges(Index count, const RangeFn& fn) const;
  // Index sets partitioning [0, count) along the given axis of the
  // observation matrix.
  virtual void for_slabs(Axis axis, Index count, const SlabFn& fn) const;
};

const Engine& sequential_engine();

// b^T b, a^T b and b * small, reduced over row ranges in slab order.
Matrix gram(const Matrix& b, const Engine& engine = sequential_engine());
Matrix cross(const Matrix& a, const Matrix& b, const Engine& engine = sequential_engine());
Matrix times(const Matrix& b, const Matrix& small, const Engine& engine = sequential_engine());

class LinearOperator {
 public:
  virtual ~LinearOperator() = default;
  virtual Index rows() const = 0;
  virtual Index cols() const = 0;

  // Z * w (w is n x k).
  Matrix multiply(const Matrix& w, const Engine& engine = sequential_engine()) const;
  // Z^T * w (w is m x k).
  Matrix multiply_transpose(const Matrix& w, const Engine& engine = sequential_engine()) const;
  Matrix dense() const;

 protected:
  virtual Matrix do_multiply(const Matrix& w, const Engine& engine) const = 0;
  virtual Matrix do_multiply_transpose(const Matrix& w, const Engine& engine) const = 0;
};

class DenseOperator : public LinearOperator {
 public:
  explicit DenseOperator(Matrix z) : z_(std::move(z)) {}
  Index rows() const override { return z_.rows(); }
  Index cols() const override { return z_.cols(); }
  const Matrix& matrix() const { return z_; }

 protected:
  Matrix do_multiply(const Matrix& w, const Engine& engine) const override;
  Matrix do_multiply_transpose(const Matrix& w, const Engine& engine) const override;

 private:
  Matrix z_;
};

// Orthonormal basis of span(b) from the Gram matrix, applied twice.
// Directions with Gram eigenvalue <= 1e-12 * max are dropped.
Matrix inde_span(const Matrix& b, const Engine& engine = sequential_engine());
Matrix householder_span(const Matrix& b);

Matrix power_method(const LinearOperator& z, const Matrix& r, int power_iters,
                    const Engine& engine = sequential_engine());

// SVD of a thin matrix through its span: b = (P U) S V^T.
FactoredMatrix svd_via_span(const Matrix& b, const Engine& engine = sequential_engine());

// Scalar prox applied to a descending spectrum. For TNN the leading theta
// values are kept and the rest soft-thresholded.
Vector prox_spectrum(const PenaltySpec& spec, const Vector& sigma, double mu, double weight = 1.0);

struct ProxParams {
  PenaltySpec spec;
  double mu = 0.0;
  double weight = 1.0;
};

struct GsvtResult {
  FactoredMatrix x;
  Matrix v_full;  // all right singular vectors of Q^T Z
  Vector sigma;   // all singular values of Q^T Z
  Index kept = 0; // count of singular values above the threshold
};

GsvtResult approx_gsvt(const LinearOperator& z, const Matrix& r, const ProxParams& prox,
                       int power_iters = 3, const Engine& engine = sequential_engine());
GsvtResult approx_gsvt(const LinearOperator& z, const Matrix& r, double mu, const PenaltySpec& spec);

Matrix exact_gsvt_oracle(const Matrix& z, double mu, const PenaltySpec& spec, double weight = 1.0);

}  // namespace fancl
