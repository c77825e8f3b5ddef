#include "fancl/slr.hpp"

#include <algorithm>
#include <numeric>
#include <string>

namespace fancl {

Index ObservationPattern::row_of(Index k) const {
  const auto it = std::upper_bound(row_ptr.begin(), row_ptr.end(), k);
  return static_cast<Index>(it - row_ptr.begin()) - 1;
}

SparseObserved SparseObserved::from_triplets(Index m, Index n, const std::vector<Triplet>& entries) {
  if (m < 0 || n < 0) throw ShapeError("negative shape");
  std::vector<std::size_t> order(entries.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (const auto& e : entries) {
    if (e.row < 0 || e.row >= m || e.col < 0 || e.col >= n) {
      throw std::out_of_range("entry (" + std::to_string(e.row) + ", " + std::to_string(e.col) +
                              ") outside " + std::to_string(m) + "x" + std::to_string(n));
    }
  }
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto& x = entries[a];
    const auto& y = entries[b];
    return x.row != y.row ? x.row < y.row : x.col < y.col;
  });

  auto p = std::make_shared<ObservationPattern>();
  p->m = m;
  p->n = n;
  p->row_ptr.assign(static_cast<std::size_t>(m) + 1, 0);
  p->col_ptr.assign(static_cast<std::size_t>(n) + 1, 0);
  p->col_idx.reserve(entries.size());
  SparseObserved out;
  out.values.reserve(entries.size());
  for (std::size_t k = 0; k < order.size(); ++k) {
    const auto& e = entries[order[k]];
    if (k > 0) {
      const auto& prev = entries[order[k - 1]];
      if (prev.row == e.row && prev.col == e.col) {
        throw std::invalid_argument("duplicate coordinate (" + std::to_string(e.row) + ", " +
                                    std::to_string(e.col) + ")");
      }
    }
    ++p->row_ptr[static_cast<std::size_t>(e.row) + 1];
    ++p->col_ptr[static_cast<std::size_t>(e.col) + 1];
    p->col_idx.push_back(e.col);
    out.values.push_back(e.value);
  }
  for (Index i = 0; i < m; ++i) p->row_ptr[i + 1] += p->row_ptr[i];
  for (Index j = 0; j < n; ++j) p->col_ptr[j + 1] += p->col_ptr[j];

  const auto nnz = static_cast<std::size_t>(p->nnz());
  p->row_idx.resize(nnz);
  p->csc_to_csr.resize(nnz);
  std::vector<Index> next(p->col_ptr.begin(), p->col_ptr.end() - 1);
  for (Index i = 0; i < m; ++i) {
    for (Index k = p->row_ptr[i]; k < p->row_ptr[i + 1]; ++k) {
      const Index pos = next[p->col_idx[k]]++;
      p->row_idx[pos] = i;
      p->csc_to_csr[pos] = k;
    }
  }
  out.pattern = std::move(p);
  return out;
}

SparseObserved SparseObserved::empty(Index m, Index n) { return from_triplets(m, n, {}); }

SparseObserved SparseObserved::with_values(std::vector<double> v) const {
  if (static_cast<Index>(v.size()) != nnz()) throw ShapeError("value count does not match pattern");
  return SparseObserved{pattern, std::move(v)};
}

std::vector<Triplet> SparseObserved::triplets() const {
  std::vector<Triplet> out;
  out.reserve(values.size());
  const auto& p = *pattern;
  for (Index i = 0; i < p.m; ++i) {
    for (Index k = p.row_ptr[i]; k < p.row_ptr[i + 1]; ++k) out.push_back({i, p.col_idx[k], values[k]});
  }
  return out;
}

Matrix SparseObserved::dense() const {
  Matrix d = Matrix::Zero(rows(), cols());
  for (const auto& t : triplets()) d(t.row, t.col) = t.value;
  return d;
}

StackedLowRank stack(std::initializer_list<WeightedTerm> terms) {
  if (terms.size() == 0) throw ShapeError("stack needs at least one term");
  const Index m = terms.begin()->mat->rows();
  const Index n = terms.begin()->mat->cols();
  Index total = 0;
  for (const auto& t : terms) {
    if (t.mat->rows() != m || t.mat->cols() != n) throw ShapeError("stack: shapes differ");
    total += t.mat->rank();
  }
  StackedLowRank out{Matrix(m, total), Matrix(n, total)};
  Index c = 0;
  for (const auto& t : terms) {
    const Index r = t.mat->rank();
    if (r == 0) continue;
    out.left.middleCols(c, r) = t.coef * (t.mat->U * t.mat->S.asDiagonal());
    out.right.middleCols(c, r) = t.mat->V;
    c += r;
  }
  return out;
}

StackedLowRank stack(const FactoredMatrix& x) { return stack({{1.0, &x}}); }

namespace {

// Thin Q and the square-ish R of a Householder QR.
std::pair<Matrix, Matrix> thin_qr(const Matrix& a) {
  const Index r = std::min(a.rows(), a.cols());
  Eigen::HouseholderQR<Matrix> qr(a);
  Matrix q = qr.householderQ() * Matrix::Identity(a.rows(), r);
  Matrix rr = qr.matrixQR().topRows(r).triangularView<Eigen::Upper>();
  return {std::move(q), std::move(rr)};
}

}  // namespace

FactoredMatrix compress(const StackedLowRank& x) {
  const Index m = x.rows();
  const Index n = x.cols();
  if (x.left.cols() == 0 || m == 0 || n == 0) return FactoredMatrix::zero(m, n);
  const auto [ql, rl] = thin_qr(x.left);
  const auto [qr, rr] = thin_qr(x.right);
  const Eigen::JacobiSVD<Matrix> svd(rl * rr.transpose(), Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Vector& s = svd.singularValues();
  Index r = 0;
  double scale = s.size() > 0 ? s(0) : 0.0;
  for (Index j = 0; j < x.left.cols(); ++j) scale = std::max(scale, x.left.col(j).norm() * x.right.col(j).norm());
  const double cut = 1e-13 * scale;
  while (r < s.size() && s(r) > cut) ++r;
  FactoredMatrix out(ql * svd.matrixU().leftCols(r), s.head(r), qr * svd.matrixV().leftCols(r));
  out.m = m;
  out.n = n;
  return out;
}

double frob_norm_sq(const StackedLowRank& x, const Engine& engine) {
  if (x.left.cols() == 0) return 0.0;
  const double v = gram(x.left, engine).cwiseProduct(gram(x.right, engine)).sum();
  return std::max(v, 0.0);
}

double frob_dist_sq(const FactoredMatrix& a, const FactoredMatrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw ShapeError("frob_dist_sq: shapes differ");
  return frob_norm_sq(stack({{1.0, &a}, {-1.0, &b}}));
}

SparseObserved project_omega(const StackedLowRank& x, const std::shared_ptr<const ObservationPattern>& mask,
                             const Engine& engine) {
  if (x.rows() != mask->m || x.cols() != mask->n) throw ShapeError("project_omega: shapes differ");
  std::vector<double> values(static_cast<std::size_t>(mask->nnz()), 0.0);
  const Index r = x.left.cols();
  if (r > 0) {
    const Matrix lt = x.left.transpose();
    const Matrix rt = x.right.transpose();
    const auto& p = *mask;
    engine.for_slabs(Axis::Rows, p.m, [&](int, std::span<const Index> rows) {
      for (Index i : rows) {
        const double* li = lt.data() + i * r;
        for (Index k = p.row_ptr[i]; k < p.row_ptr[i + 1]; ++k) {
          const double* rj = rt.data() + p.col_idx[k] * r;
          double acc = 0.0;
          for (Index c = 0; c < r; ++c) acc += li[c] * rj[c];
          values[k] = acc;
        }
      }
    });
  }
  return SparseObserved{mask, std::move(values)};
}

SparseObserved project_omega(const FactoredMatrix& x, const std::shared_ptr<const ObservationPattern>& mask,
                             const Engine& engine) {
  return project_omega(stack(x), mask, engine);
}

SlrOperator::SlrOperator(double coef1, const FactoredMatrix& low1, double coef2, const FactoredMatrix& low2,
                         SparseObserved sparse)
    : low_(stack({{coef1, &low1}, {coef2, &low2}})), sparse_(std::move(sparse)) {
  if (low_.rows() != sparse_.rows() || low_.cols() != sparse_.cols()) {
    throw ShapeError("SlrOperator: shapes differ");
  }
}

SlrOperator::SlrOperator(double coef1, const FactoredMatrix& low1, SparseObserved sparse)
    : low_(stack({{coef1, &low1}})), sparse_(std::move(sparse)) {
  if (low_.rows() != sparse_.rows() || low_.cols() != sparse_.cols()) {
    throw ShapeError("SlrOperator: shapes differ");
  }
}

namespace {

// Low-rank part of (L R^T) W, returned transposed (k x rows).
Matrix low_rank_part_t(const Matrix& left, const Matrix& right, const Matrix& w, const Engine& engine) {
  if (left.cols() == 0) return Matrix::Zero(w.cols(), left.rows());
  return times(left, cross(right, w, engine), engine).transpose();
}

}  // namespace

Matrix slr_right_mul(const SlrOperator& op, const Matrix& w, const Engine& engine) {
  if (w.rows() != op.cols()) throw ShapeError("slr_right_mul: W has wrong row count");
  const Index k = w.cols();
  Matrix out_t = low_rank_part_t(op.low_rank().left, op.low_rank().right, w, engine);
  const Matrix wt = w.transpose();
  const auto& p = *op.sparse().pattern;
  const auto& val = op.sparse().values;
  engine.for_slabs(Axis::Rows, p.m, [&](int, std::span<const Index> rows) {
    for (Index i : rows) {
      double* o = out_t.data() + i * k;
      for (Index e = p.row_ptr[i]; e < p.row_ptr[i + 1]; ++e) {
        const double v = val[e];
        const double* wj = wt.data() + p.col_idx[e] * k;
        for (Index c = 0; c < k; ++c) o[c] += v * wj[c];
      }
    }
  });
  return out_t.transpose();
}

Matrix slr_left_mul(const SlrOperator& op, const Matrix& w, const Engine& engine) {
  if (w.rows() != op.rows()) throw ShapeError("slr_left_mul: W has wrong row count");
  const Index k = w.cols();
  Matrix out_t = low_rank_part_t(op.low_rank().right, op.low_rank().left, w, engine);
  const Matrix wt = w.transpose();
  const auto& p = *op.sparse().pattern;
  const auto& val = op.sparse().values;
  engine.for_slabs(Axis::Cols, p.n, [&](int, std::span<const Index> cols) {
    for (Index j : cols) {
      double* o = out_t.data() + j * k;
      for (Index e = p.col_ptr[j]; e < p.col_ptr[j + 1]; ++e) {
        const double v = val[p.csc_to_csr[e]];
        const double* wi = wt.data() + p.row_idx[e] * k;
        for (Index c = 0; c < k; ++c) o[c] += v * wi[c];
      }
    }
  });
  return out_t.transpose();
}

Matrix SlrOperator::do_multiply(const Matrix& w, const Engine& engine) const {
  return slr_right_mul(*this, w, engine);
}

Matrix SlrOperator::do_multiply_transpose(const Matrix& w, const Engine& engine) const {
  return slr_left_mul(*this, w, engine);
}

double observed_residual_sq(const SparseObserved& a, const std::vector<double>& values, const Engine& engine) {
  const auto& p = *a.pattern;
  if (static_cast<Index>(values.size()) != p.nnz() || a.values.size() != values.size()) {
    throw ShapeError("residual: value count does not match the pattern");
  }
  std::vector<double> partial(static_cast<std::size_t>(engine.slabs()), 0.0);
  engine.for_slabs(Axis::Rows, p.m, [&](int s, std::span<const Index> rows) {
    double acc = 0.0;
    for (Index i : rows) {
      for (Index k = p.row_ptr[i]; k < p.row_ptr[i + 1]; ++k) {
        const double d = a.values[k] - values[k];
        acc += d * d;
      }
    }
    partial[s] = acc;
  });
  double total = 0.0;
  for (double v : partial) total += v;
  return total;
}

}  // namespace fancl
