#pragma once

#include <utility>
#include <vector>

#include "fancl/solver.hpp"

namespace fancl {

// 0.5 * ||P_Omega(X - O)||_F^2 + lambda * r(X).
class CompletionProblem : public Problem {
 public:
  CompletionProblem(SparseObserved observed, PenaltySpec penalty, double lambda);

  Index rows() const override { return observed_.rows(); }
  Index cols() const override { return observed_.cols(); }
  double lipschitz() const override { return 1.0; }
  const PenaltySpec& penalty() const override { return penalty_; }
  double lambda() const override { return lambda_; }
  const SparseObserved& observed() const { return observed_; }

  IterateCache cache(const FactoredMatrix& x, const Engine& engine) const override;
  double loss(const IterateCache& cache, const Engine& engine) const override;
  std::unique_ptr<LinearOperator> gradient_step(const Extrapolation& point, double tau,
                                                const Engine& engine) const override;

 private:
  SparseObserved observed_;
  PenaltySpec penalty_;
  double lambda_;
};

// Objective at the problem's lambda. `cache` is X on the observed entries;
// it is recomputed when empty.
double mc_objective(const CompletionProblem& prob, const FactoredMatrix& x, const IterateCache& cache = {},
                    const Engine& engine = sequential_engine());

SlrOperator mc_grad_operator(const CompletionProblem& prob, const Extrapolation& point, double tau,
                             const Engine& engine = sequential_engine());

SolveResult mc_fit(const CompletionProblem& prob, const SolverConfig& cfg, Variant variant,
                   const Engine& engine = sequential_engine());

std::vector<double> mc_predict(const FactoredMatrix& x, const std::vector<std::pair<Index, Index>>& coords);

}  // namespace fancl
