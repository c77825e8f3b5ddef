#include "fancl/solver.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <optional>
#include <random>
#include <string>

namespace fancl {

IterateCache combine_caches(const Extrapolation& point) {
  if (point.beta == 0.0) return *point.cur_cache;
  const auto& a = *point.cur_cache;
  const auto& b = *point.prev_cache;
  IterateCache out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = (1.0 + point.beta) * a[i] - point.beta * b[i];
  return out;
}

double objective(const Problem& problem, const FactoredMatrix& x, const IterateCache& cache, double lambda_t,
                 const Engine& engine) {
  return problem.loss(cache, engine) + penalty_spectrum(problem.penalty(), x.S, lambda_t);
}

std::string_view to_string(Branch b) {
  switch (b) {
    case Branch::Plain: return "plain";
    case Branch::Accelerated: return "accelerated";
    case Branch::Fallback: return "fallback";
    case Branch::Stalled: return "stalled";
  }
  return "?";
}

Variant parse_variant(std::string_view name) {
  if (name == "fancl") return Variant::Fancl;
  if (name == "fancl-acc" || name == "fancl_acc") return Variant::FanclAcc;
  throw ParameterError("unknown variant: " + std::string(name));
}

Branch parse_branch(std::string_view name) {
  for (Branch b : {Branch::Plain, Branch::Accelerated, Branch::Fallback, Branch::Stalled}) {
    if (to_string(b) == name) return b;
  }
  throw ParameterError("unknown branch '" + std::string(name) + "'");
}

std::string_view to_string(Variant v) { return v == Variant::Fancl ? "fancl" : "fancl-acc"; }

void validate(const SolverConfig& cfg, double rho) {
  if (!(cfg.tau > rho)) throw ParameterError("tau must exceed the Lipschitz constant");
  if (!(cfg.nu > 0.0 && cfg.nu < 1.0)) throw ParameterError("nu must lie in (0, 1)");
  if (!(cfg.delta > 0.0)) throw ParameterError("delta must be positive");
  if (cfg.power_iters < 1 || cfg.p_max < 1 || cfg.max_iters < 1) throw ParameterError("iteration counts must be >= 1");
  if (!(cfg.tol >= 0.0)) throw ParameterError("tol must be >= 0");
  if (cfg.slack_cols < 0) throw ParameterError("slack_cols must be >= 0");
}

double initial_lambda(const SolverConfig& cfg, double lambda) {
  const double l0 = cfg.lambda0 > 0.0 ? cfg.lambda0 : cfg.lambda0_factor * lambda;
  if (!(l0 >= lambda)) throw ParameterError("lambda0 must be >= lambda");
  return l0;
}

double continuation_step(double lambda_prev, double lambda, double nu, int t, DecayMode mode) {
  const double factor = mode == DecayMode::Geometric ? nu : std::pow(nu, t);
  return lambda + (lambda_prev - lambda) * factor;
}

RateReport rate_certificate(const std::vector<IterationStats>& stats, double coef) {
  RateReport r;
  if (stats.empty() || !(coef > 0.0)) return r;
  r.min_dist_sq = std::numeric_limits<double>::infinity();
  for (const auto& s : stats) r.min_dist_sq = std::min(r.min_dist_sq, s.dist_sq);
  const double drop = stats.front().objective_before - stats.back().objective;
  r.bound = drop / (coef * static_cast<double>(stats.size()));
  r.margin = r.bound - r.min_dist_sq;
  const double slack = 1e-12 * std::max(1.0, std::abs(stats.front().objective_before)) / coef;
  r.pass = r.min_dist_sq <= r.bound + slack;
  return r;
}

bool descent_holds(const std::vector<IterationStats>& stats, double rtol) {
  for (std::size_t i = 0; i < stats.size(); ++i) {
    const auto& s = stats[i];
    const double slack = rtol * std::max(1.0, std::abs(s.objective_before));
    if (s.objective > s.objective_before - s.coef * s.dist_sq + slack) return false;
    if (i > 0 && s.objective > stats[i - 1].objective + slack) return false;
  }
  return true;
}

Matrix gaussian_matrix(Index rows, Index cols, std::mt19937_64& rng) {
  std::normal_distribution<double> nd(0.0, 1.0);
  Matrix out(rows, cols);
  for (Index j = 0; j < cols; ++j) {
    for (Index i = 0; i < rows; ++i) out(i, j) = nd(rng);
  }
  return out;
}

Matrix warm_start_basis(const Matrix& a, const Matrix& b, Index extra, Index min_cols, Index max_cols,
                  std::mt19937_64& rng, const Engine& engine) {
  const Index n = a.rows();
  Matrix m(n, a.cols() + b.cols() + extra);
  m << a, b, gaussian_matrix(n, extra, rng);
  Matrix q = inde_span(m, engine);
  while (q.cols() < min_cols) {
    Matrix more(n, q.cols() + (min_cols - q.cols()));
    more << q, gaussian_matrix(n, min_cols - q.cols(), rng);
    q = inde_span(more, engine);
  }
  if (q.cols() > max_cols) q = q.leftCols(max_cols).eval();
  return q;
}

namespace {

using Clock = std::chrono::steady_clock;

struct StepOutcome {
  bool accepted = false;
  bool near_fixed_point = false;
  FactoredMatrix x;
  IterateCache cache;
  double loss = 0.0;
  double objective = 0.0;
  double dist_sq = 0.0;
  Matrix v_full;
  int inner = 0;
  bool saturated = false;
};

double distance_to_center(const FactoredMatrix& x, const Extrapolation& c, const Engine& engine) {
  if (c.beta == 0.0) return frob_norm_sq(stack({{1.0, &x}, {-1.0, c.cur}}), engine);
  return frob_norm_sq(stack({{1.0, &x}, {-(1.0 + c.beta), c.cur}, {c.beta, c.prev}}), engine);
}

// Inexact proximal step around `center` with sufficient decrease c1.
StepOutcome prox_step(const Problem& problem, const Extrapolation& center, double f_center, const Matrix& r,
                      double lambda_t, const SolverConfig& cfg, const Engine& engine) {
  const double c1 = (cfg.tau - problem.lipschitz()) / 4.0;
  const auto op = problem.gradient_step(center, cfg.tau, engine);
  const ProxParams prox{problem.penalty(), lambda_t, 1.0 / cfg.tau};
  const double fixed_tol = 1e-10 * (1.0 + std::abs(f_center));

  StepOutcome best;
  best.objective = std::numeric_limits<double>::infinity();
  Matrix v = r;
  for (int p = 1; p <= cfg.p_max; ++p) {
    GsvtResult g = approx_gsvt(*op, v, prox, cfg.power_iters, engine);
    StepOutcome cand;
    cand.inner = p;
    cand.cache = problem.cache(g.x, engine);
    cand.loss = problem.loss(cand.cache, engine);
    cand.objective = cand.loss + penalty_spectrum(problem.penalty(), g.x.S, lambda_t);
    cand.dist_sq = distance_to_center(g.x, center, engine);
    cand.saturated = g.kept >= v.cols();
    cand.v_full = g.v_full.cols() > 0 ? g.v_full : v;
    cand.x = std::move(g.x);
    const double violation = cand.objective - (f_center - c1 * cand.dist_sq);
    if (violation <= 0.0) {
      cand.accepted = true;
      return cand;
    }
    if (center.beta == 0.0 && violation <= fixed_tol) {
      // Numerically at a fixed point: stay put.
      StepOutcome stay;
      stay.accepted = true;
      stay.near_fixed_point = true;
      stay.inner = p;
      stay.x = *center.cur;
      stay.cache = *center.cur_cache;
      stay.loss = problem.loss(stay.cache, engine);
      stay.objective = f_center;
      stay.dist_sq = 0.0;
      stay.v_full = cand.v_full;
      stay.saturated = cand.saturated;
      return stay;
    }
    v = cand.v_full;
    if (cand.objective < best.objective) best = std::move(cand);
  }
  best.accepted = false;
  best.inner = cfg.p_max;
  return best;
}

double penalty_of(const Problem& problem, const FactoredMatrix& x, double lambda_t) {
  return penalty_spectrum(problem.penalty(), x.S, lambda_t);
}

}  // namespace

InexactPsResult inexact_ps(const Problem& problem, const FactoredMatrix& x, const Matrix& r, double lambda_t,
                           const SolverConfig& cfg, const Engine& engine) {
  validate(cfg, problem.lipschitz());
  const IterateCache cache = problem.cache(x, engine);
  const Extrapolation center{&x, &cache, &x, &cache, 0.0};
  const double f = objective(problem, x, cache, lambda_t, engine);
  StepOutcome s = prox_step(problem, center, f, inde_span(r, engine), lambda_t, cfg, engine);
  if (!s.accepted) throw InexactPsStalled("inexact proximal step did not decrease the objective", s.x);
  return {std::move(s.x), std::move(s.v_full), s.inner, s.objective, s.dist_sq, s.near_fixed_point};
}

SolveResult solve(const Problem& problem, const SolverConfig& cfg, Variant variant, const Engine& engine) {
  const double rho = problem.lipschitz();
  validate(cfg, rho);
  validate(problem.penalty());
  const double lambda = problem.lambda();
  if (!(lambda > 0.0)) throw ParameterError("lambda must be positive");
  const bool accelerated = variant == Variant::FanclAcc;
  const Index m = problem.rows();
  const Index n = problem.cols();
  const Index max_cols = std::min(m, n);
  const Index min_cols =
      problem.penalty().kind == PenaltyKind::TNN
          ? std::min<Index>(static_cast<Index>(problem.penalty().theta) + 1, max_cols)
          : 1;

  SolveResult result;
  result.c1 = (cfg.tau - rho) / 4.0;
  result.certificate_coef = accelerated ? std::min(result.c1, cfg.delta / 2.0) : result.c1;

  std::mt19937_64 rng(cfg.seed);
  FactoredMatrix x_cur = FactoredMatrix::zero(m, n);
  IterateCache cache_cur = problem.cache(x_cur, engine);
  FactoredMatrix x_prev = x_cur;
  IterateCache cache_prev = cache_cur;
  double loss_cur = problem.loss(cache_cur, engine);
  Matrix warm_cur = gaussian_matrix(n, 1, rng);
  Matrix warm_prev = gaussian_matrix(n, 1, rng);
  bool saturated = false;
  double lambda_t = initial_lambda(cfg, lambda);
  double alpha_prev = 1.0;
  double alpha_cur = 1.0;

  for (int t = 1; t <= cfg.max_iters; ++t) {
    const auto start = Clock::now();
    lambda_t = continuation_step(lambda_t, lambda, cfg.nu, t, cfg.decay_mode);
    const Matrix r = warm_start_basis(warm_cur, warm_prev, saturated ? cfg.slack_cols : 0, min_cols, max_cols, rng,
                                engine);
    const double f_cur = loss_cur + penalty_of(problem, x_cur, lambda_t);
    const Extrapolation plain{&x_cur, &cache_cur, &x_prev, &cache_prev, 0.0};

    IterationStats st;
    st.t = t;
    st.lambda_t = lambda_t;
    st.objective_before = f_cur;
    st.k = r.cols();

    std::optional<StepOutcome> chosen;
    const double beta = accelerated ? (alpha_prev - 1.0) / alpha_cur : 0.0;
    if (beta > 0.0) {
      const Extrapolation ext{&x_cur, &cache_cur, &x_prev, &cache_prev, beta};
      const FactoredMatrix y = compress(stack({{1.0 + beta, &x_cur}, {-beta, &x_prev}}));
      const IterateCache cache_y = combine_caches(ext);
      const double f_y = problem.loss(cache_y, engine) + penalty_of(problem, y, lambda_t);
      StepOutcome a = prox_step(problem, ext, f_y, r, lambda_t, cfg, engine);
      if (a.accepted && a.objective <= f_cur - cfg.delta / 2.0 * a.dist_sq) {
        st.branch = Branch::Accelerated;
        st.coef = cfg.delta / 2.0;
        chosen = std::move(a);
      }
    }
    if (!chosen) {
      StepOutcome s = prox_step(problem, plain, f_cur, r, lambda_t, cfg, engine);
      if (s.accepted) {
        // With beta = 0 the extrapolated point is X_t itself.
        if (accelerated && beta == 0.0 && s.objective <= f_cur - cfg.delta / 2.0 * s.dist_sq) {
          st.branch = Branch::Accelerated;
          st.coef = cfg.delta / 2.0;
        } else {
          st.branch = accelerated ? Branch::Fallback : Branch::Plain;
          st.coef = result.c1;
        }
        chosen = std::move(s);
      } else {
        if (!cfg.permissive) {
          throw InexactPsStalled("inexact proximal step stalled at t=" + std::to_string(t), s.x);
        }
        StepOutcome stay;
        stay.accepted = true;
        stay.x = x_cur;
        stay.cache = cache_cur;
        stay.loss = loss_cur;
        stay.objective = f_cur;
        stay.v_full = s.v_full.cols() > 0 ? s.v_full : r;
        stay.inner = cfg.p_max;
        st.branch = Branch::Stalled;
        st.coef = result.c1;
        chosen = std::move(stay);
      }
    }

    StepOutcome& s = *chosen;
    st.objective = s.objective;
    st.dist_sq = s.dist_sq;
    st.margin = st.objective_before - st.coef * st.dist_sq - st.objective;
    st.rank = s.x.rank();
    st.inner_iters = s.inner;
    st.near_fixed_point = s.near_fixed_point;

    saturated = s.saturated;
    warm_prev = std::move(warm_cur);
    if (s.x.rank() > 0) {
      warm_cur = s.x.V;
    } else if (s.v_full.cols() > 0) {
      warm_cur = s.v_full.leftCols(1);
    } else {
      warm_cur = gaussian_matrix(n, 1, rng);
    }
    x_prev = std::move(x_cur);
    cache_prev = std::move(cache_cur);
    x_cur = std::move(s.x);
    cache_cur = std::move(s.cache);
    loss_cur = s.loss;
    const double next_alpha = 0.5 * (std::sqrt(4.0 * alpha_cur * alpha_cur + 1.0) + 1.0);
    alpha_prev = alpha_cur;
    alpha_cur = next_alpha;

    st.wall_ms = std::chrono::duration<double, std::milli>(Clock::now() - start).count();
    const double reference = result.stats.empty() ? st.objective_before : result.stats.back().objective;
    result.stats.push_back(st);

    const bool continuing = lambda_t - lambda > cfg.tol * lambda;
    const double change = std::abs(reference - st.objective);
    if (reference == 0.0 || (!continuing && change <= cfg.tol * std::abs(reference))) {
      result.converged = true;
      break;
    }
  }
  result.x = std::move(x_cur);
  return result;
}

SolveResult fancl(const Problem& problem, const SolverConfig& cfg, const Engine& engine) {
  return solve(problem, cfg, Variant::Fancl, engine);
}

SolveResult fancl_acc(const Problem& problem, const SolverConfig& cfg, const Engine& engine) {
  return solve(problem, cfg, Variant::FanclAcc, engine);
}

}  // namespace fancl
