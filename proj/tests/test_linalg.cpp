#include <doctest.h>

#include <random>

#include "fancl/linalg.hpp"
#include "oracles.hpp"

using namespace fancl;
using testutil::randn;

namespace {

double orth_error(const Matrix& q) {
  return (q.transpose() * q - Matrix::Identity(q.cols(), q.cols())).norm();
}

double projection_residual(const Matrix& q, const Matrix& b) { return (b - q * (q.transpose() * b)).norm(); }

Matrix diag_matrix(Index m, Index n, std::initializer_list<double> d) {
  Matrix z = Matrix::Zero(m, n);
  Index i = 0;
  for (double v : d) z(i, i) = v, ++i;
  return z;
}

}  // namespace

TEST_CASE("factored matrix basics") {
  const auto z = FactoredMatrix::zero(4, 3);
  CHECK(z.rank() == 0);
  CHECK(z.dense().isZero());
  CHECK(z.dense().rows() == 4);
  CHECK_THROWS_AS(FactoredMatrix(Matrix::Ones(3, 2), Vector::Ones(1), Matrix::Ones(3, 1)), ShapeError);
}

TEST_CASE("thin kernels") {
  std::mt19937_64 rng(1);
  const Matrix a = randn(37, 4, rng), b = randn(37, 3, rng), s = randn(3, 5, rng);
  CHECK((gram(b) - b.transpose() * b).norm() <= 1e-12 * b.squaredNorm());
  CHECK((cross(a, b) - a.transpose() * b).norm() <= 1e-12 * a.norm() * b.norm());
  CHECK((times(b, s) - b * s).norm() <= 1e-12 * b.norm() * s.norm());
}

TEST_CASE("dense operator multiplies both ways") {
  std::mt19937_64 rng(2);
  const Matrix z = randn(20, 15, rng);
  const DenseOperator op(z);
  const Matrix w = randn(15, 3, rng), u = randn(20, 3, rng);
  CHECK((op.multiply(w) - z * w).norm() <= 1e-12);
  CHECK((op.multiply_transpose(u) - z.transpose() * u).norm() <= 1e-12);
  CHECK(op.dense() == z);
  CHECK_THROWS_AS(op.multiply(randn(14, 2, rng)), ShapeError);
}

TEST_CASE("power method on a diagonal matrix finds the leading axes") {
  std::mt19937_64 rng(3);
  const DenseOperator op(diag_matrix(8, 6, {3.0, 2.0, 1.0}));
  const Matrix r = randn(6, 2, rng);
  Matrix axes = Matrix::Zero(8, 2);
  axes(0, 0) = axes(1, 1) = 1.0;
  // Error contracts by (sigma_3 / sigma_2)^2 per round.
  const Matrix q3 = power_method(op, r, 3);
  CHECK(projection_residual(q3, axes) <= 0.05);
  const Matrix q = power_method(op, r, 15);
  CHECK(projection_residual(q, axes) <= 1e-8);
  CHECK(orth_error(q) <= 1e-10);
}

TEST_CASE("power method on the identity returns a unit vector") {
  std::mt19937_64 rng(4);
  const DenseOperator op(Matrix::Identity(10, 10));
  const Matrix q = power_method(op, randn(10, 1, rng), 3);
  CHECK(q.cols() == 1);
  CHECK(orth_error(q) <= 1e-10);
}

TEST_CASE("power method recovers the top singular subspace") {
  std::mt19937_64 rng(5);
  Vector s(40);
  for (Index i = 0; i < 40; ++i) s(i) = i < 5 ? 20.0 - 2.0 * i : 5.0 * std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  std::sort(s.data(), s.data() + 40, std::greater<double>());
  const Matrix z = testutil::random_factored(60, 40, s, rng).dense();
  Eigen::JacobiSVD<Matrix> svd(z, Eigen::ComputeThinU);
  const Matrix q = power_method(DenseOperator(z), randn(40, 5, rng), 10);
  const Matrix u5 = svd.matrixU().leftCols(5);
  CHECK(projection_residual(q, u5) <= 1e-6);
}

TEST_CASE("power method clamps oversized subspaces") {
  std::mt19937_64 rng(6);
  const Matrix q = power_method(DenseOperator(randn(5, 4, rng)), randn(4, 7, rng), 2);
  CHECK(q.cols() <= 4);
  CHECK(orth_error(q) <= 1e-10);
}

TEST_CASE("warm start with the exact right factor converges at once") {
  std::mt19937_64 rng(7);
  Vector s(6);
  s << 10, 8, 6, 1, 0.5, 0.1;
  const auto f = testutil::random_factored(50, 40, s, rng);
  const Matrix q = power_method(DenseOperator(f.dense()), f.V.leftCols(3), 1);
  CHECK(projection_residual(q, f.U.leftCols(3)) <= 1e-10);
}

TEST_CASE("span of orthonormal columns is themselves") {
  std::mt19937_64 rng(8);
  Eigen::HouseholderQR<Matrix> qr(randn(30, 4, rng));
  const Matrix b = qr.householderQ() * Matrix::Identity(30, 4);
  const Matrix q = inde_span(b);
  CHECK(q.cols() == 4);
  CHECK(projection_residual(q, b) <= 1e-10);
}

TEST_CASE("span drops duplicated directions") {
  std::mt19937_64 rng(9);
  const Matrix b = randn(20, 1, rng);
  Matrix bb(20, 2);
  bb << b, 2.0 * b;
  const Matrix q = inde_span(bb);
  REQUIRE(q.cols() == 1);
  CHECK(std::min((q - b.normalized()).norm(), (q + b.normalized()).norm()) <= 1e-10);
  CHECK(inde_span(Matrix::Zero(10, 3)).cols() == 0);
}

TEST_CASE("span of a random thin matrix") {
  std::mt19937_64 rng(10);
  const Matrix b = randn(100, 6, rng);
  for (const Matrix& q : {inde_span(b), householder_span(b)}) {
    CHECK(q.cols() == 6);
    CHECK(orth_error(q) <= 1e-8);
    CHECK(projection_residual(q, b) <= 1e-8 * b.norm());
  }
}

TEST_CASE("svd through the span") {
  SUBCASE("embedded diagonal") {
    const auto f = svd_via_span(diag_matrix(5, 2, {2.0, 1.0}));
    REQUIRE(f.rank() == 2);
    CHECK(f.S(0) == doctest::Approx(2.0));
    CHECK(f.S(1) == doctest::Approx(1.0));
  }
  SUBCASE("zero") { CHECK(svd_via_span(Matrix::Zero(6, 3)).rank() == 0); }
  SUBCASE("random") {
    std::mt19937_64 rng(11);
    const Matrix b = randn(80, 7, rng);
    const auto f = svd_via_span(b);
    Eigen::JacobiSVD<Matrix> svd(b);
    REQUIRE(f.rank() == 7);
    CHECK((f.S - svd.singularValues()).norm() <= 1e-8 * svd.singularValues().norm());
    CHECK((f.dense() - b).norm() <= 1e-8 * b.norm());
    CHECK(orth_error(f.U) <= 1e-10);
    CHECK(orth_error(f.V) <= 1e-10);
  }
}

TEST_CASE("exact gsvt oracle") {
  std::mt19937_64 rng(12);
  CHECK(exact_gsvt_oracle(Matrix::Zero(6, 4), 1.0, {PenaltyKind::LSP, 1.0}).isZero());
  const Matrix z = randn(20, 15, rng);
  Eigen::JacobiSVD<Matrix> svd(z, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Vector shrunk = (svd.singularValues().array() - 1.5).max(0.0).matrix();
  const Matrix svt = svd.matrixU() * shrunk.asDiagonal() * svd.matrixV().transpose();
  CHECK((exact_gsvt_oracle(z, 1.5, {PenaltyKind::NuclearNorm, 1.0}) - svt).norm() <= 1e-10);

  const PenaltySpec capped{PenaltyKind::CappedL1, 2.0};
  const Matrix x = exact_gsvt_oracle(z, 2.0, capped);
  Eigen::JacobiSVD<Matrix> out(x);
  std::vector<double> expect;
  for (Index i = 0; i < svd.singularValues().size(); ++i) {
    expect.push_back(prox_scalar(capped, svd.singularValues()(i), 2.0));
  }
  std::sort(expect.rbegin(), expect.rend());
  for (std::size_t i = 0; i < expect.size(); ++i) CHECK(out.singularValues()(i) == doctest::Approx(expect[i]).epsilon(1e-9));
}

TEST_CASE("approximate gsvt examples") {
  std::mt19937_64 rng(13);
  const DenseOperator op(diag_matrix(10, 8, {5.0, 0.1, 0.05}));
  auto res = approx_gsvt(op, randn(8, 2, rng), 1.0, {PenaltyKind::NuclearNorm, 1.0});
  REQUIRE(res.x.rank() == 1);
  CHECK(res.x.S(0) == doctest::Approx(4.0));
  CHECK(res.v_full.cols() == 2);

  const DenseOperator small(diag_matrix(10, 8, {0.5, 0.3}));
  CHECK(approx_gsvt(small, randn(8, 3, rng), 1.0, {PenaltyKind::CappedL1, 2.0}).x.rank() == 0);
}

TEST_CASE("approximate gsvt matches the oracle with enough columns") {
  std::mt19937_64 rng(14);
  const Matrix z = randn(50, 40, rng);
  const PenaltySpec lsp{PenaltyKind::LSP, 1.0};
  const double mu = 0.8;
  Eigen::JacobiSVD<Matrix> svd(z);
  const double gamma = threshold_gamma(lsp, mu);
  const Index khat = (svd.singularValues().array() > gamma).count();
  const Index k = std::min<Index>(khat + 2, 40);
  const auto res = approx_gsvt(DenseOperator(z), randn(40, k, rng), ProxParams{lsp, mu, 1.0}, 10);
  const Matrix oracle = exact_gsvt_oracle(z, mu, lsp);
  CHECK((res.x.dense() - oracle).norm() <= 1e-6 * std::max(1.0, oracle.norm()));
}

TEST_CASE("approximate gsvt output is well formed") {
  std::mt19937_64 rng(15);
  for (PenaltyKind kind : {PenaltyKind::CappedL1, PenaltyKind::LSP, PenaltyKind::TNN, PenaltyKind::SCAD,
                           PenaltyKind::MCP, PenaltyKind::NuclearNorm}) {
    for (int trial = 0; trial < 5; ++trial) {
      const PenaltySpec spec{kind, kind == PenaltyKind::SCAD ? 3.0 : 2.0};
      const Index k = 3 + trial;
      const auto res = approx_gsvt(DenseOperator(randn(30, 25, rng)), randn(25, k, rng), 4.0, spec);
      CAPTURE(to_string(kind));
      CHECK(res.x.rank() <= k);
      if (res.x.rank() > 0) {
        CHECK(orth_error(res.x.U) <= 1e-10);
        CHECK(orth_error(res.x.V) <= 1e-10);
        for (Index i = 1; i < res.x.rank(); ++i) CHECK(res.x.S(i) <= res.x.S(i - 1));
      }
    }
  }
}
