#include "fancl/rpca.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <optional>

namespace fancl {

LowRankPlusDense::LowRankPlusDense(StackedLowRank low, Matrix dense)
    : low_(std::move(low)), dense_(std::move(dense)) {
  if (low_.rows() != dense_.rows() || low_.cols() != dense_.cols()) throw ShapeError("LowRankPlusDense: shapes differ");
}

Matrix LowRankPlusDense::do_multiply(const Matrix& w, const Engine& engine) const {
  Matrix out = DenseOperator(dense_).multiply(w, engine);
  if (low_.left.cols() > 0) out += times(low_.left, cross(low_.right, w, engine), engine);
  return out;
}

Matrix LowRankPlusDense::do_multiply_transpose(const Matrix& w, const Engine& engine) const {
  Matrix out = DenseOperator(dense_).multiply_transpose(w, engine);
  if (low_.left.cols() > 0) out += times(low_.right, cross(low_.left, w, engine), engine);
  return out;
}

Matrix sparse_prox_matrix(const Matrix& s, const PenaltySpec& spec, double upsilon, double tau) {
  validate(spec);
  if (!(tau > 0.0)) throw ParameterError("tau must be positive");
  Matrix out(s.rows(), s.cols());
  const double w = 1.0 / tau;
  for (Index j = 0; j < s.cols(); ++j) {
    for (Index i = 0; i < s.rows(); ++i) {
      const double v = s(i, j);
      const double y = prox_scalar(spec, std::abs(v), upsilon, w);
      out(i, j) = v < 0.0 ? -y : y;
    }
  }
  return out;
}

double sparse_penalty_sum(const Matrix& s, const PenaltySpec& spec, double upsilon) {
  double total = 0.0;
  for (Index j = 0; j < s.cols(); ++j) {
    for (Index i = 0; i < s.rows(); ++i) {
      if (s(i, j) != 0.0) total += penalty_value(spec, std::abs(s(i, j)), upsilon);
    }
  }
  return total;
}

double rpca_loss(const Matrix& observed, const StackedLowRank& x, const Matrix& s, Index block_rows) {
  if (observed.rows() != s.rows() || observed.cols() != s.cols() || x.rows() != s.rows() || x.cols() != s.cols()) {
    throw ShapeError("rpca_loss: shapes differ");
  }
  double total = 0.0;
  const Index m = observed.rows();
  for (Index b = 0; b < m; b += block_rows) {
    const Index h = std::min(block_rows, m - b);
    Matrix r = s.middleRows(b, h) - observed.middleRows(b, h);
    if (x.left.cols() > 0) r.noalias() += x.left.middleRows(b, h) * x.right.transpose();
    total += r.squaredNorm();
  }
  return 0.5 * total;
}

double rpca_objective(const RpcaProblem& prob, const FactoredMatrix& x, const Matrix& s, double lambda_t) {
  return rpca_loss(prob.observed, stack(x), s) + penalty_spectrum(prob.low_rank_penalty, x.S, lambda_t) +
         sparse_penalty_sum(s, prob.sparse_penalty, prob.upsilon);
}

double rpca_objective(const RpcaProblem& prob, const FactoredMatrix& x, const Matrix& s) {
  return rpca_objective(prob, x, s, prob.lambda);
}

RpcaStep rpca_prox_step(const RpcaProblem& prob, const StackedLowRank& yx, const Matrix& ys, double lambda_t,
                        double tau, const Matrix& r, int power_iters) {
  // Shared gradient of both blocks: Y^X + Y^S - O.
  Matrix g = ys - prob.observed;
  if (yx.left.cols() > 0) g.noalias() += yx.left * yx.right.transpose();
  RpcaStep step;
  step.s = sparse_prox_matrix(ys - g / tau, prob.sparse_penalty, prob.upsilon, tau);
  const LowRankPlusDense z(yx, -g / tau);
  GsvtResult res = approx_gsvt(z, r, ProxParams{prob.low_rank_penalty, lambda_t, 1.0 / tau}, power_iters);
  step.saturated = res.kept >= r.cols();
  step.v_full = res.v_full.cols() > 0 ? std::move(res.v_full) : r;
  step.x = std::move(res.x);
  return step;
}

namespace {

using Clock = std::chrono::steady_clock;

struct JointOutcome {
  bool accepted = false;
  bool near_fixed_point = false;
  FactoredMatrix x;
  Matrix s;
  double objective = 0.0;
  double dist_sq = 0.0;
  Matrix v_full;
  int inner = 0;
  bool saturated = false;
};

JointOutcome joint_step(const RpcaProblem& prob, const StackedLowRank& yx, const Matrix& ys, double f_center,
                        bool plain, const FactoredMatrix* x_center, const Matrix& r, double lambda_t,
                        const SolverConfig& cfg) {
  const double c1 = (cfg.tau - 2.0) / 4.0;
  const double fixed_tol = 1e-10 * (1.0 + std::abs(f_center));
  JointOutcome best;
  best.objective = std::numeric_limits<double>::infinity();
  Matrix v = r;
  for (int p = 1; p <= cfg.p_max; ++p) {
    RpcaStep step = rpca_prox_step(prob, yx, ys, lambda_t, cfg.tau, v, cfg.power_iters);
    JointOutcome cand;
    cand.inner = p;
    cand.objective = rpca_objective(prob, step.x, step.s, lambda_t);
    StackedLowRank diff = stack(step.x);
    diff.left.conservativeResize(Eigen::NoChange, diff.left.cols() + yx.left.cols());
    diff.right.conservativeResize(Eigen::NoChange, diff.right.cols() + yx.right.cols());
    diff.left.rightCols(yx.left.cols()) = -yx.left;
    diff.right.rightCols(yx.right.cols()) = yx.right;
    cand.dist_sq = frob_norm_sq(diff) + (step.s - ys).squaredNorm();
    cand.saturated = step.saturated;
    cand.v_full = std::move(step.v_full);
    cand.x = std::move(step.x);
    cand.s = std::move(step.s);
    const double violation = cand.objective - (f_center - c1 * cand.dist_sq);
    if (violation <= 0.0) {
      cand.accepted = true;
      return cand;
    }
    if (plain && violation <= fixed_tol) {
      JointOutcome stay;
      stay.accepted = true;
      stay.near_fixed_point = true;
      stay.inner = p;
      stay.x = *x_center;
      stay.s = ys;
      stay.objective = f_center;
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

}  // namespace

RpcaResult rpca_fit(const RpcaProblem& prob, const SolverConfig& cfg) {
  validate(cfg, 2.0);
  validate(prob.low_rank_penalty);
  validate(prob.sparse_penalty);
  if (!(prob.lambda > 0.0) || !(prob.upsilon >= 0.0)) throw ParameterError("need lambda > 0 and upsilon >= 0");
  const Index m = prob.observed.rows();
  const Index n = prob.observed.cols();
  const Index max_cols = std::min(m, n);
  const Index min_cols =
      prob.low_rank_penalty.kind == PenaltyKind::TNN
          ? std::min<Index>(static_cast<Index>(prob.low_rank_penalty.theta) + 1, max_cols)
          : 1;

  RpcaResult result;
  result.c1 = (cfg.tau - 2.0) / 4.0;
  result.certificate_coef = std::min(result.c1, cfg.delta / 2.0);

  std::mt19937_64 rng(cfg.seed);
  FactoredMatrix x_cur = FactoredMatrix::zero(m, n);
  FactoredMatrix x_prev = x_cur;
  Matrix s_cur = Matrix::Zero(m, n);
  Matrix s_prev = s_cur;
  Matrix warm_cur = gaussian_matrix(n, 1, rng);
  Matrix warm_prev = gaussian_matrix(n, 1, rng);
  bool saturated = false;
  double lambda_t = initial_lambda(cfg, prob.lambda);
  double alpha_prev = 1.0;
  double alpha_cur = 1.0;
  double loss_cur = rpca_loss(prob.observed, stack(x_cur), s_cur);
  double spen_cur = 0.0;

  for (int t = 1; t <= cfg.max_iters; ++t) {
    const auto start = Clock::now();
    lambda_t = continuation_step(lambda_t, prob.lambda, cfg.nu, t, cfg.decay_mode);
    const Matrix r = warm_start_basis(warm_cur, warm_prev, saturated ? cfg.slack_cols : 0, min_cols, max_cols, rng);
    const double f_cur = loss_cur + penalty_spectrum(prob.low_rank_penalty, x_cur.S, lambda_t) + spen_cur;

    IterationStats st;
    st.t = t;
    st.lambda_t = lambda_t;
    st.objective_before = f_cur;
    st.k = r.cols();

    std::optional<JointOutcome> chosen;
    const double beta = (alpha_prev - 1.0) / alpha_cur;
    if (beta > 0.0) {
      const StackedLowRank yx = stack({{1.0 + beta, &x_cur}, {-beta, &x_prev}});
      const Matrix ys = (1.0 + beta) * s_cur - beta * s_prev;
      const FactoredMatrix y_fac = compress(yx);
      const double f_y = rpca_loss(prob.observed, yx, ys) +
                         penalty_spectrum(prob.low_rank_penalty, y_fac.S, lambda_t) +
                         sparse_penalty_sum(ys, prob.sparse_penalty, prob.upsilon);
      JointOutcome a = joint_step(prob, yx, ys, f_y, false, nullptr, r, lambda_t, cfg);
      if (a.accepted && a.objective <= f_cur - cfg.delta / 2.0 * a.dist_sq) {
        st.branch = Branch::Accelerated;
        st.coef = cfg.delta / 2.0;
        chosen = std::move(a);
      }
    }
    if (!chosen) {
      JointOutcome s = joint_step(prob, stack(x_cur), s_cur, f_cur, true, &x_cur, r, lambda_t, cfg);
      if (s.accepted) {
        if (beta == 0.0 && s.objective <= f_cur - cfg.delta / 2.0 * s.dist_sq) {
          st.branch = Branch::Accelerated;
          st.coef = cfg.delta / 2.0;
        } else {
          st.branch = Branch::Fallback;
          st.coef = result.c1;
        }
        chosen = std::move(s);
      } else {
        if (!cfg.permissive) {
          throw InexactPsStalled("joint proximal step stalled at t=" + std::to_string(t), s.x);
        }
        JointOutcome stay;
        stay.accepted = true;
        stay.x = x_cur;
        stay.s = s_cur;
        stay.objective = f_cur;
        stay.v_full = s.v_full.cols() > 0 ? s.v_full : r;
        stay.inner = cfg.p_max;
        st.branch = Branch::Stalled;
        st.coef = result.c1;
        chosen = std::move(stay);
      }
    }

    JointOutcome& s = *chosen;
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
    s_prev = std::move(s_cur);
    x_cur = std::move(s.x);
    s_cur = std::move(s.s);
    loss_cur = rpca_loss(prob.observed, stack(x_cur), s_cur);
    spen_cur = sparse_penalty_sum(s_cur, prob.sparse_penalty, prob.upsilon);
    const double next_alpha = 0.5 * (std::sqrt(4.0 * alpha_cur * alpha_cur + 1.0) + 1.0);
    alpha_prev = alpha_cur;
    alpha_cur = next_alpha;

    st.wall_ms = std::chrono::duration<double, std::milli>(Clock::now() - start).count();
    const double reference = result.stats.empty() ? st.objective_before : result.stats.back().objective;
    result.stats.push_back(st);

    const bool continuing = lambda_t - prob.lambda > cfg.tol * prob.lambda;
    const double change = std::abs(reference - st.objective);
    if (reference == 0.0 || (!continuing && change <= cfg.tol * std::abs(reference))) {
      result.converged = true;
      break;
    }
  }
  result.x = std::move(x_cur);
  result.s = std::move(s_cur);
  return result;
}

double support_accuracy(const Matrix& s_est, const Matrix& s_true, double zero_tol) {
  if (s_est.rows() != s_true.rows() || s_est.cols() != s_true.cols()) throw ShapeError("support_accuracy: shapes differ");
  if (s_est.size() == 0) throw std::invalid_argument("support_accuracy: empty matrices");
  Index agree = 0;
  for (Index j = 0; j < s_est.cols(); ++j) {
    for (Index i = 0; i < s_est.rows(); ++i) {
      const bool a = std::abs(s_est(i, j)) > zero_tol;
      const bool b = std::abs(s_true(i, j)) > zero_tol;
      agree += a == b;
    }
  }
  return static_cast<double>(agree) / static_cast<double>(s_est.size());
}

}  // namespace fancl
