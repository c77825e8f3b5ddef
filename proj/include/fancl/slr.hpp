#pragma once

#include <memory>
#include <vector>

#include "fancl/linalg.hpp"

namespace fancl {

struct Triplet {
  Index row = 0;
  Index col = 0;
  double value = 0.0;
};

// Coordinates of the observed set. Entries are stored in row-major order;
// the column-major index arrays point back into that order.
struct ObservationPattern {
  Index m = 0;
  Index n = 0;
  std::vector<Index> row_ptr;     // m + 1
  std::vector<Index> col_idx;     // nnz, row-major
  std::vector<Index> col_ptr;     // n + 1
  std::vector<Index> row_idx;     // nnz, column-major
  std::vector<Index> csc_to_csr;  // nnz, column-major position -> value index

  Index nnz() const { return static_cast<Index>(col_idx.size()); }
  Index row_of(Index k) const;  // row of the k-th value (binary search)
};

// Values of a matrix on an observation pattern.
struct SparseObserved {
  std::shared_ptr<const ObservationPattern> pattern;
  std::vector<double> values;

  Index rows() const { return pattern->m; }
  Index cols() const { return pattern->n; }
  Index nnz() const { return pattern->nnz(); }

  // Rejects out-of-range and duplicate coordinates.
  static SparseObserved from_triplets(Index m, Index n, const std::vector<Triplet>& entries);
  static SparseObserved empty(Index m, Index n);
  SparseObserved with_values(std::vector<double> v) const;
  std::vector<Triplet> triplets() const;
  Matrix dense() const;
};

// L * R^T with L = [c_1 U_1 S_1, c_2 U_2 S_2, ...] and R = [V_1, V_2, ...].
struct StackedLowRank {
  Matrix left;
  Matrix right;

  Index rows() const { return left.rows(); }
  Index cols() const { return right.rows(); }
  Matrix dense() const { return left * right.transpose(); }
};

struct WeightedTerm {
  double coef;
  const FactoredMatrix* mat;
};

StackedLowRank stack(std::initializer_list<WeightedTerm> terms);
StackedLowRank stack(const FactoredMatrix& x);

// Re-factor a combination as an SVD, dropping singular values below 1e-13
// of the largest singular value or stacked term norm.
FactoredMatrix compress(const StackedLowRank& x);

double frob_norm_sq(const StackedLowRank& x, const Engine& engine = sequential_engine());
double frob_dist_sq(const FactoredMatrix& a, const FactoredMatrix& b);

SparseObserved project_omega(const StackedLowRank& x, const std::shared_ptr<const ObservationPattern>& mask,
                             const Engine& engine = sequential_engine());
SparseObserved project_omega(const FactoredMatrix& x, const std::shared_ptr<const ObservationPattern>& mask,
                             const Engine& engine = sequential_engine());

// Sum over observed entries of (a - values)^2, reduced per row slab.
double observed_residual_sq(const SparseObserved& a, const std::vector<double>& values,
                            const Engine& engine = sequential_engine());

// coef1 * low1 + coef2 * low2 + sparse.
class SlrOperator : public LinearOperator {
 public:
  SlrOperator(double coef1, const FactoredMatrix& low1, double coef2, const FactoredMatrix& low2,
              SparseObserved sparse);
  SlrOperator(double coef1, const FactoredMatrix& low1, SparseObserved sparse);

  Index rows() const override { return sparse_.rows(); }
  Index cols() const override { return sparse_.cols(); }
  const StackedLowRank& low_rank() const { return low_; }
  const SparseObserved& sparse() const { return sparse_; }

 protected:
  Matrix do_multiply(const Matrix& w, const Engine& engine) const override;
  Matrix do_multiply_transpose(const Matrix& w, const Engine& engine) const override;

 private:
  StackedLowRank low_;
  SparseObserved sparse_;
};

Matrix slr_right_mul(const SlrOperator& op, const Matrix& w, const Engine& engine = sequential_engine());
Matrix slr_left_mul(const SlrOperator& op, const Matrix& w, const Engine& engine = sequential_engine());

}  // namespace fancl
