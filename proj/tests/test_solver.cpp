#include <doctest.h>

#include <random>

#include "fancl/matcomp.hpp"
#include "fancl/solver.hpp"
#include "oracles.hpp"

using namespace fancl;
using testutil::randn;

namespace {

Matrix mask_of(const SparseObserved& o) {
  Matrix m = Matrix::Zero(o.rows(), o.cols());
  for (const auto& t : o.triplets()) m(t.row, t.col) = 1.0;
  return m;
}

CompletionProblem small_problem(std::uint64_t seed, PenaltyKind kind = PenaltyKind::CappedL1, Index m = 30) {
  std::mt19937_64 rng(seed);
  auto obs = testutil::random_completion(m, m, 2, 0.5, 0.05, rng);
  const double theta = kind == PenaltyKind::TNN ? 2.0 : (kind == PenaltyKind::SCAD ? 3.7 : 2.0);
  return CompletionProblem(std::move(obs), {kind, kind == PenaltyKind::LSP ? 1.0 : theta}, 1.0);
}

}  // namespace

TEST_CASE("continuation schedule") {
  CHECK(continuation_step(10.0, 1.0, 0.5, 1, DecayMode::Geometric) == doctest::Approx(5.5));
  CHECK(continuation_step(5.5, 1.0, 0.5, 2, DecayMode::Geometric) == doctest::Approx(3.25));
  CHECK(continuation_step(10.0, 1.0, 0.5, 2, DecayMode::PowerOfNu) == doctest::Approx(3.25));
  CHECK(continuation_step(1.0, 1.0, 0.7, 5, DecayMode::Geometric) == 1.0);
  double lt = 100.0;
  for (int t = 1; t <= 200; ++t) {
    const double next = continuation_step(lt, 2.0, 0.9, t, DecayMode::Geometric);
    CHECK(next <= lt);
    CHECK(next >= 2.0);
    lt = next;
  }
  CHECK(lt == doctest::Approx(2.0).epsilon(1e-6));
  SolverConfig cfg;
  cfg.lambda0_factor = 10.0;
  CHECK(initial_lambda(cfg, 0.3) == doctest::Approx(3.0));
  cfg.lambda0 = 7.0;
  CHECK(initial_lambda(cfg, 0.3) == 7.0);
}

TEST_CASE("configuration validation") {
  SolverConfig cfg;
  CHECK_NOTHROW(validate(cfg, 1.0));
  cfg.tau = 1.0;
  CHECK_THROWS_AS(validate(cfg, 1.0), ParameterError);
  cfg = {};
  cfg.nu = 1.0;
  CHECK_THROWS_AS(validate(cfg, 1.0), ParameterError);
  cfg = {};
  cfg.delta = 0.0;
  CHECK_THROWS_AS(validate(cfg, 1.0), ParameterError);
  cfg = {};
  cfg.p_max = 0;
  CHECK_THROWS_AS(validate(cfg, 1.0), ParameterError);
  const auto prob = small_problem(1);
  cfg = {};
  cfg.tau = 0.9;
  CHECK_THROWS_AS(fancl::fancl(prob, cfg), ParameterError);
  CHECK_THROWS_AS(parse_variant("fista"), ParameterError);
  for (Branch b : {Branch::Plain, Branch::Accelerated, Branch::Fallback, Branch::Stalled}) {
    CHECK(parse_branch(to_string(b)) == b);
  }
  CHECK_THROWS_AS(parse_branch("x"), ParameterError);
}

TEST_CASE("all-zero observations converge to zero at once") {
  std::vector<Triplet> t;
  for (Index i = 0; i < 10; ++i) t.push_back({i, (i * 3) % 10, 0.0});
  const CompletionProblem prob(SparseObserved::from_triplets(10, 10, t), {PenaltyKind::LSP, 1.0}, 0.5);
  for (Variant v : {Variant::Fancl, Variant::FanclAcc}) {
    const auto res = solve(prob, {}, v);
    CHECK(res.converged);
    CHECK(res.x.rank() == 0);
    CHECK(res.stats.size() == 1);
  }
}

TEST_CASE("fixed point of the proximal step is accepted at once") {
  std::mt19937_64 rng(2);
  Vector s(3);
  s << 30.0, 20.0, 10.0;
  const auto x = testutil::random_factored(25, 20, s, rng);
  std::vector<Triplet> t;
  const Matrix d = x.dense();
  for (Index i = 0; i < 25; ++i) {
    for (Index j = 0; j < 20; ++j) t.push_back({i, j, d(i, j)});
  }
  // Full mask and O = X: the gradient vanishes and capped-l1 keeps values above theta.
  const CompletionProblem prob(SparseObserved::from_triplets(25, 20, t), {PenaltyKind::CappedL1, 1.0}, 0.5);
  SolverConfig cfg;
  const auto res = inexact_ps(prob, x, randn(20, 5, rng), 0.5, cfg);
  CHECK(res.p_used == 1);
  CHECK((res.x.dense() - d).norm() <= 1e-8 * d.norm());
  CHECK(res.dist_sq <= 1e-12 * d.squaredNorm());
}

TEST_CASE("exact proximal step decreases by the proximal margin") {
  std::mt19937_64 rng(3);
  for (auto kind : {PenaltyKind::CappedL1, PenaltyKind::LSP, PenaltyKind::TNN, PenaltyKind::SCAD, PenaltyKind::MCP}) {
    for (int trial = 0; trial < 5; ++trial) {
      auto obs = testutil::random_completion(20, 18, 3, 0.5, 0.1, rng);
      const Matrix o = obs.dense(), mask = mask_of(obs);
      const PenaltySpec spec{kind, kind == PenaltyKind::SCAD ? 3.7 : 2.0};
      const double lambda = 0.5, tau = 1.05;
      const Matrix x = randn(20, 3, rng) * randn(3, 18, rng);
      const Matrix z = x - mask.cwiseProduct(x - o) / tau;
      const Matrix xn = exact_gsvt_oracle(z, lambda / tau, spec);
      const double before = testutil::dense_mc_objective(x, o, mask, spec, lambda);
      const double after = testutil::dense_mc_objective(xn, o, mask, spec, lambda);
      CAPTURE(to_string(kind));
      CHECK(after <= before - (tau - 1.0) / 2.0 * (xn - x).squaredNorm() + 1e-9 * before);
    }
  }
}

TEST_CASE("matches a dense reference solver on a small instance") {
  std::mt19937_64 rng(4);
  auto obs = testutil::random_completion(20, 20, 2, 0.8, 0.01, rng);
  const Matrix o = obs.dense(), mask = mask_of(obs);
  for (auto kind : {PenaltyKind::CappedL1, PenaltyKind::LSP}) {
    const PenaltySpec spec{kind, kind == PenaltyKind::LSP ? 1.0 : 5.0};
    const double lambda = 1.0;
    const CompletionProblem prob(obs, spec, lambda);
    SolverConfig cfg;
    cfg.tol = 1e-10;
    cfg.max_iters = 5000;
    const auto res = fancl::fancl(prob, cfg);
    const Matrix ref = testutil::dense_mc_reference(o, mask, spec, lambda, cfg.tau, initial_lambda(cfg, lambda),
                                                    cfg.nu, 5000);
    const double f = testutil::dense_mc_objective(res.x.dense(), o, mask, spec, lambda);
    const double g = testutil::dense_mc_objective(ref, o, mask, spec, lambda);
    CAPTURE(to_string(kind));
    CHECK(res.converged);
    CHECK(std::abs(f - g) <= 1e-4 * std::abs(g));
    CHECK(mc_objective(prob, res.x) == doctest::Approx(f).epsilon(1e-10));
  }
}

TEST_CASE("huge delta rejects every extrapolation") {
  const auto prob = small_problem(5);
  SolverConfig cfg;
  cfg.delta = 1e12;
  const auto plain = fancl::fancl(prob, cfg);
  const auto acc = fancl_acc(prob, cfg);
  REQUIRE(plain.stats.size() == acc.stats.size());
  for (std::size_t i = 0; i < plain.stats.size(); ++i) {
    CHECK(acc.stats[i].branch == Branch::Fallback);
    CHECK(acc.stats[i].objective == doctest::Approx(plain.stats[i].objective).epsilon(1e-12));
  }
  CHECK((acc.x.dense() - plain.x.dense()).norm() <= 1e-10 * plain.x.S.norm());
}

TEST_CASE("objectives decrease with the proximal margin") {
  for (std::uint64_t seed = 10; seed < 15; ++seed) {
    for (auto kind : {PenaltyKind::CappedL1, PenaltyKind::LSP, PenaltyKind::TNN}) {
      const auto prob = small_problem(seed, kind);
      for (Variant v : {Variant::Fancl, Variant::FanclAcc}) {
        SolverConfig cfg;
        cfg.seed = seed;
        const auto res = solve(prob, cfg, v);
        CAPTURE(seed);
        CAPTURE(to_string(kind));
        CAPTURE(to_string(v));
        CHECK(res.converged);
        CHECK(descent_holds(res.stats));
        for (const auto& s : res.stats) CHECK(s.margin >= -1e-9 * std::max(1.0, s.objective_before));
        const auto cert = rate_certificate(res.stats, res.certificate_coef);
        CHECK(cert.pass);
        const std::vector<IterationStats> first(res.stats.begin(), res.stats.begin() + 1);
        CHECK(rate_certificate(first, res.certificate_coef).pass);
      }
    }
  }
}

TEST_CASE("rate certificate arithmetic") {
  std::vector<IterationStats> st(2);
  st[0].objective_before = 10.0;
  st[0].dist_sq = 3.0;
  st[1].objective = 4.0;
  st[1].dist_sq = 2.0;
  const auto r = rate_certificate(st, 0.5);
  CHECK(r.bound == doctest::Approx(6.0));
  CHECK(r.min_dist_sq == 2.0);
  CHECK(r.pass);
  CHECK_FALSE(rate_certificate(st, 5.0).pass);
  st[1].objective = 11.0;
  CHECK_FALSE(descent_holds(st));
}

TEST_CASE("one power round usually suffices") {
  int steps = 0, first = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto prob = small_problem(100 + seed);
    SolverConfig cfg;
    cfg.seed = seed;
    const auto res = fancl::fancl(prob, cfg);
    for (const auto& s : res.stats) {
      ++steps;
      first += s.inner_iters == 1;
    }
  }
  CHECK(static_cast<double>(first) >= 0.95 * steps);
}

TEST_CASE("warm-start width follows the rank recurrence") {
  const auto prob = small_problem(6, PenaltyKind::LSP, 40);
  SolverConfig cfg;
  const auto res = fancl_acc(prob, cfg);
  Index r_prev = 1, r_prev2 = 1;
  for (const auto& s : res.stats) {
    CHECK(s.k <= r_prev + r_prev2 + cfg.slack_cols);
    r_prev2 = std::max<Index>(r_prev, 1);
    r_prev = std::max<Index>(s.rank, 1);
  }
}

TEST_CASE("runs are reproducible from the seed") {
  const auto prob = small_problem(7);
  SolverConfig cfg;
  cfg.seed = 42;
  const auto a = fancl_acc(prob, cfg), b = fancl_acc(prob, cfg);
  REQUIRE(a.stats.size() == b.stats.size());
  for (std::size_t i = 0; i < a.stats.size(); ++i) CHECK(a.stats[i].objective == b.stats[i].objective);
  CHECK(a.x.dense() == b.x.dense());
}

TEST_CASE("warm start basis") {
  std::mt19937_64 rng(8);
  const Matrix a = randn(30, 2, rng);
  Matrix b(30, 2);
  b << a.col(0), randn(30, 1, rng);
  const Matrix q = warm_start_basis(a, b, 0, 1, 30, rng);
  CHECK(q.cols() == 3);
  CHECK((q.transpose() * q - Matrix::Identity(3, 3)).norm() <= 1e-10);
  CHECK(warm_start_basis(a, b, 4, 1, 30, rng).cols() == 7);
  CHECK(warm_start_basis(a, b, 0, 6, 30, rng).cols() == 6);
  CHECK(warm_start_basis(a, b, 10, 1, 5, rng).cols() == 5);
}
