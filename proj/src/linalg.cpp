#include "fancl/linalg.hpp"

#include <algorithm>
#include <iostream>
#include <numeric>
#include <vector>

namespace fancl {

FactoredMatrix::FactoredMatrix(Matrix u, Vector s, Matrix v)
    : U(std::move(u)), S(std::move(s)), V(std::move(v)), m(U.rows()), n(V.rows()) {
  if (U.cols() != S.size() || V.cols() != S.size()) throw ShapeError("factor ranks disagree");
}

FactoredMatrix FactoredMatrix::zero(Index m, Index n) {
  return FactoredMatrix(Matrix(m, 0), Vector(0), Matrix(n, 0));
}

Matrix FactoredMatrix::dense() const {
  if (rank() == 0) return Matrix::Zero(m, n);
  return U * S.asDiagonal() * V.transpose();
}

void Engine::for_ranges(Index count, const RangeFn& fn) const { fn(0, 0, count); }

void Engine::for_slabs(Axis, Index count, const SlabFn& fn) const {
  std::vector<Index> all(static_cast<std::size_t>(count));
  std::iota(all.begin(), all.end(), Index{0});
  fn(0, all);
}

const Engine& sequential_engine() {
  static const Engine engine;
  return engine;
}

Matrix gram(const Matrix& b, const Engine& engine) { return cross(b, b, engine); }

Matrix cross(const Matrix& a, const Matrix& b, const Engine& engine) {
  if (a.rows() != b.rows()) throw ShapeError("cross: row counts differ");
  std::vector<Matrix> partial(static_cast<std::size_t>(engine.slabs()),
                              Matrix::Zero(a.cols(), b.cols()));
  engine.for_ranges(a.rows(), [&](int s, Index begin, Index end) {
    if (end > begin) {
      partial[s].noalias() = a.middleRows(begin, end - begin).transpose() * b.middleRows(begin, end - begin);
    }
  });
  Matrix out = partial[0];
  for (std::size_t s = 1; s < partial.size(); ++s) out += partial[s];
  return out;
}

Matrix times(const Matrix& b, const Matrix& small, const Engine& engine) {
  if (b.cols() != small.rows()) throw ShapeError("times: inner dimensions differ");
  Matrix out(b.rows(), small.cols());
  engine.for_ranges(b.rows(), [&](int, Index begin, Index end) {
    if (end > begin) out.middleRows(begin, end - begin).noalias() = b.middleRows(begin, end - begin) * small;
  });
  return out;
}

Matrix LinearOperator::multiply(const Matrix& w, const Engine& engine) const {
  if (w.rows() != cols()) throw ShapeError("multiply: W has wrong row count");
  return do_multiply(w, engine);
}

Matrix LinearOperator::multiply_transpose(const Matrix& w, const Engine& engine) const {
  if (w.rows() != rows()) throw ShapeError("multiply_transpose: W has wrong row count");
  return do_multiply_transpose(w, engine);
}

Matrix LinearOperator::dense() const { return multiply(Matrix::Identity(cols(), cols())); }

Matrix DenseOperator::do_multiply(const Matrix& w, const Engine& engine) const {
  Matrix out(z_.rows(), w.cols());
  engine.for_ranges(z_.rows(), [&](int, Index begin, Index end) {
    if (end > begin) out.middleRows(begin, end - begin).noalias() = z_.middleRows(begin, end - begin) * w;
  });
  return out;
}

Matrix DenseOperator::do_multiply_transpose(const Matrix& w, const Engine& engine) const {
  Matrix out(z_.cols(), w.cols());
  engine.for_ranges(z_.cols(), [&](int, Index begin, Index end) {
    if (end > begin) {
      out.middleRows(begin, end - begin).noalias() = z_.middleCols(begin, end - begin).transpose() * w;
    }
  });
  return out;
}

namespace {

Matrix gram_span_pass(const Matrix& b, const Engine& engine) {
  if (b.cols() == 0) return Matrix(b.rows(), 0);
  const Eigen::SelfAdjointEigenSolver<Matrix> es(gram(b, engine));
  const Vector& ev = es.eigenvalues();  // ascending
  const double top = ev.maxCoeff();
  if (!(top > 0.0)) return Matrix(b.rows(), 0);
  std::vector<Index> keep;
  for (Index i = ev.size() - 1; i >= 0; --i) {
    if (ev(i) > 1e-12 * top) keep.push_back(i);
  }
  Matrix w(b.cols(), static_cast<Index>(keep.size()));
  for (std::size_t c = 0; c < keep.size(); ++c) {
    w.col(static_cast<Index>(c)) = es.eigenvectors().col(keep[c]) / std::sqrt(ev(keep[c]));
  }
  return times(b, w, engine);
}

}  // namespace

Matrix inde_span(const Matrix& b, const Engine& engine) {
  return gram_span_pass(gram_span_pass(b, engine), engine);
}

Matrix householder_span(const Matrix& b) {
  if (b.cols() == 0 || b.rows() == 0) return Matrix(b.rows(), 0);
  Eigen::ColPivHouseholderQR<Matrix> qr(b);
  qr.setThreshold(1e-12);
  const Index r = qr.rank();
  Matrix q = qr.householderQ() * Matrix::Identity(b.rows(), r);
  return q;
}

Matrix power_method(const LinearOperator& z, const Matrix& r, int power_iters, const Engine& engine) {
  if (power_iters < 1) throw ParameterError("power_iters must be >= 1");
  if (r.rows() != z.cols()) throw ShapeError("power_method: R has wrong row count");
  if (r.cols() < 1) throw ShapeError("power_method: R needs at least one column");
  const Index kmax = std::min(z.rows(), z.cols());
  Matrix start = r;
  if (r.cols() > kmax) {
    std::clog << "warning: power_method clamps k=" << r.cols() << " to " << kmax << "\n";
    start = r.leftCols(kmax);
  }
  Matrix q = inde_span(z.multiply(start, engine), engine);
  for (int j = 1; j < power_iters && q.cols() > 0; ++j) {
    q = inde_span(z.multiply(z.multiply_transpose(q, engine), engine), engine);
  }
  return q;
}

FactoredMatrix svd_via_span(const Matrix& b, const Engine& engine) {
  const Matrix p = inde_span(b, engine);
  if (p.cols() == 0) return FactoredMatrix::zero(b.rows(), b.cols());
  const Eigen::JacobiSVD<Matrix> svd(cross(p, b, engine), Eigen::ComputeThinU | Eigen::ComputeThinV);
  Index r = 0;
  while (r < svd.singularValues().size() && svd.singularValues()(r) > 0.0) ++r;
  return FactoredMatrix(times(p, svd.matrixU().leftCols(r), engine), svd.singularValues().head(r),
                        svd.matrixV().leftCols(r));
}

Vector prox_spectrum(const PenaltySpec& spec, const Vector& sigma, double mu, double weight) {
  validate(spec);
  Vector y(sigma.size());
  if (spec.kind == PenaltyKind::TNN) {
    const auto keep = static_cast<Index>(spec.theta);
    for (Index i = 0; i < sigma.size(); ++i) {
      y(i) = i < keep ? sigma(i) : std::max(sigma(i) - weight * mu, 0.0);
    }
    return y;
  }
  for (Index i = 0; i < sigma.size(); ++i) y(i) = prox_scalar(spec, sigma(i), mu, weight);
  return y;
}

GsvtResult approx_gsvt(const LinearOperator& z, const Matrix& r, const ProxParams& prox, int power_iters,
                       const Engine& engine) {
  validate(prox.spec);
  const Index kmax = std::min(z.rows(), z.cols());
  if (prox.spec.kind == PenaltyKind::TNN &&
      r.cols() < std::min<Index>(static_cast<Index>(prox.spec.theta) + 1, kmax)) {
    throw ParameterError("TNN needs at least theta+1 warm-start columns");
  }
  GsvtResult out;
  const Matrix q = power_method(z, r, power_iters, engine);
  if (q.cols() == 0) {
    out.x = FactoredMatrix::zero(z.rows(), z.cols());
    out.v_full = inde_span(r, engine);
    return out;
  }
  // Q^T Z = B^T with B = Z^T Q, so the SVD of B gives both factors.
  const FactoredMatrix sb = svd_via_span(z.multiply_transpose(q, engine), engine);
  out.sigma = sb.S;
  out.v_full = sb.U;
  const Vector y = prox_spectrum(prox.spec, sb.S, prox.mu, prox.weight);
  Index a = 0;
  while (a < y.size() && y(a) > 0.0) ++a;
  if (prox.spec.kind == PenaltyKind::TNN) {
    out.kept = a;
  } else {
    const double gamma = weighted_gamma(prox.spec, prox.mu, prox.weight);
    out.kept = (sb.S.array() > gamma).count();
  }
  out.x = FactoredMatrix(times(q, sb.V.leftCols(a), engine), y.head(a), sb.U.leftCols(a));
  out.x.m = z.rows();
  out.x.n = z.cols();
  return out;
}

GsvtResult approx_gsvt(const LinearOperator& z, const Matrix& r, double mu, const PenaltySpec& spec) {
  return approx_gsvt(z, r, ProxParams{spec, mu, 1.0});
}

Matrix exact_gsvt_oracle(const Matrix& z, double mu, const PenaltySpec& spec, double weight) {
  if (z.size() == 0) return z;
  const Eigen::JacobiSVD<Matrix> svd(z, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Vector y = prox_spectrum(spec, svd.singularValues(), mu, weight);
  return svd.matrixU() * y.asDiagonal() * svd.matrixV().transpose();
}

}  // namespace fancl
