#include "fancl/matcomp.hpp"

#include <stdexcept>
#include <string>

namespace fancl {

CompletionProblem::CompletionProblem(SparseObserved observed, PenaltySpec penalty, double lambda)
    : observed_(std::move(observed)), penalty_(penalty), lambda_(lambda) {
  validate(penalty_);
  if (!observed_.pattern) throw ShapeError("CompletionProblem needs an observation pattern");
  if (!(lambda_ >= 0.0)) throw ParameterError("lambda must be >= 0");
}

IterateCache CompletionProblem::cache(const FactoredMatrix& x, const Engine& engine) const {
  return project_omega(x, observed_.pattern, engine).values;
}

double CompletionProblem::loss(const IterateCache& cache, const Engine& engine) const {
  if (static_cast<Index>(cache.size()) != observed_.nnz()) throw ShapeError("cache does not match the pattern");
  return 0.5 * observed_residual_sq(observed_, cache, engine);
}

std::unique_ptr<LinearOperator> CompletionProblem::gradient_step(const Extrapolation& point, double tau,
                                                                 const Engine& engine) const {
  return std::make_unique<SlrOperator>(mc_grad_operator(*this, point, tau, engine));
}

SlrOperator mc_grad_operator(const CompletionProblem& prob, const Extrapolation& point, double tau,
                             const Engine& engine) {
  const auto& p = *prob.observed().pattern;
  const auto& o = prob.observed().values;
  const auto& a = *point.cur_cache;
  const double beta = point.beta;
  std::vector<double> values(o.size());
  engine.for_slabs(Axis::Rows, p.m, [&](int, std::span<const Index> rows) {
    for (Index i : rows) {
      for (Index k = p.row_ptr[i]; k < p.row_ptr[i + 1]; ++k) {
        const double y = beta == 0.0 ? a[k] : (1.0 + beta) * a[k] - beta * (*point.prev_cache)[k];
        values[k] = (o[k] - y) / tau;
      }
    }
  });
  SparseObserved sparse = prob.observed().with_values(std::move(values));
  if (beta == 0.0) return SlrOperator(1.0, *point.cur, std::move(sparse));
  return SlrOperator(1.0 + beta, *point.cur, -beta, *point.prev, std::move(sparse));
}

double mc_objective(const CompletionProblem& prob, const FactoredMatrix& x, const IterateCache& cache,
                    const Engine& engine) {
  if (cache.empty() && prob.observed().nnz() > 0) {
    return objective(prob, x, prob.cache(x, engine), prob.lambda(), engine);
  }
  return objective(prob, x, cache, prob.lambda(), engine);
}

SolveResult mc_fit(const CompletionProblem& prob, const SolverConfig& cfg, Variant variant, const Engine& engine) {
  return solve(prob, cfg, variant, engine);
}

std::vector<double> mc_predict(const FactoredMatrix& x, const std::vector<std::pair<Index, Index>>& coords) {
  std::vector<double> out;
  out.reserve(coords.size());
  const Matrix us = x.U * x.S.asDiagonal();
  for (const auto& [i, j] : coords) {
    if (i < 0 || i >= x.rows() || j < 0 || j >= x.cols()) {
      throw std::out_of_range("coordinate (" + std::to_string(i) + ", " + std::to_string(j) + ") out of range");
    }
    out.push_back(x.rank() == 0 ? 0.0 : us.row(i).dot(x.V.row(j)));
  }
  return out;
}

}  // namespace fancl
