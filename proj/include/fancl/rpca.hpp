#pragma once

#include <vector>

#include "fancl/solver.hpp"

namespace fancl {

// 0.5 * ||X + S - O||_F^2 + lambda * r(X) + upsilon * g(S).
struct RpcaProblem {
  Matrix observed;
  PenaltySpec low_rank_penalty;
  double lambda = 1.0;
  PenaltySpec sparse_penalty{PenaltyKind::L1, 1.0};
  double upsilon = 1.0;
};

struct RpcaResult {
  FactoredMatrix x;
  Matrix s;
  std::vector<IterationStats> stats;
  bool converged = false;
  double c1 = 0.0;
  double certificate_coef = 0.0;
};

// a * (left * right^T) + dense.
class LowRankPlusDense : public LinearOperator {
 public:
  LowRankPlusDense(StackedLowRank low, Matrix dense);
  Index rows() const override { return dense_.rows(); }
  Index cols() const override { return dense_.cols(); }

 protected:
  Matrix do_multiply(const Matrix& w, const Engine& engine) const override;
  Matrix do_multiply_transpose(const Matrix& w, const Engine& engine) const override;

 private:
  StackedLowRank low_;
  Matrix dense_;
};

inline constexpr Index kRpcaBlockRows = 256;

// Element-wise prox of (upsilon / tau) * g.
Matrix sparse_prox_matrix(const Matrix& s, const PenaltySpec& spec, double upsilon, double tau);
double sparse_penalty_sum(const Matrix& s, const PenaltySpec& spec, double upsilon);

// 0.5 * ||X + S - O||_F^2 with X densified block_rows at a time.
double rpca_loss(const Matrix& observed, const StackedLowRank& x, const Matrix& s,
                 Index block_rows = kRpcaBlockRows);
double rpca_objective(const RpcaProblem& prob, const FactoredMatrix& x, const Matrix& s);
double rpca_objective(const RpcaProblem& prob, const FactoredMatrix& x, const Matrix& s, double lambda_t);

struct RpcaStep {
  FactoredMatrix x;
  Matrix s;
  Matrix v_full;
  bool saturated = false;
};

// One joint proximal step from (yx, ys): S by the element-wise prox, X by
// approximate GSVT warm-started from r.
RpcaStep rpca_prox_step(const RpcaProblem& prob, const StackedLowRank& yx, const Matrix& ys, double lambda_t,
                        double tau, const Matrix& r, int power_iters);

// FaNCL-acc on (X, S). SolverConfig::tau must exceed 2.
RpcaResult rpca_fit(const RpcaProblem& prob, const SolverConfig& cfg);

double support_accuracy(const Matrix& s_est, const Matrix& s_true, double zero_tol = 1e-12);

}  // namespace fancl
