#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <stdexcept>
#include <string_view>
#include <vector>

#include "fancl/linalg.hpp"
#include "fancl/slr.hpp"

namespace fancl {

enum class DecayMode { Geometric, PowerOfNu };
enum class Variant { Fancl, FanclAcc };

struct SolverConfig {
  double tau = 1.05;
  double lambda0 = 0.0;         // <= 0 means lambda0_factor * lambda
  double lambda0_factor = 10.0;
  double nu = 0.7;
  DecayMode decay_mode = DecayMode::Geometric;
  double delta = 1e-3;
  int power_iters = 3;
  int p_max = 10;
  int max_iters = 1000;
  double tol = 1e-4;
  std::uint64_t seed = 0;
  int slack_cols = 5;
  bool permissive = false;  // keep X_t instead of throwing when a step stalls
};

// Problem-side data kept per iterate, linear in X (e.g. X on the observed
// entries). Extrapolated caches are formed by the same linear combination.
using IterateCache = std::vector<double>;

// (1 + beta) * cur - beta * prev. beta = 0 is the plain point cur.
struct Extrapolation {
  const FactoredMatrix* cur = nullptr;
  const IterateCache* cur_cache = nullptr;
  const FactoredMatrix* prev = nullptr;
  const IterateCache* prev_cache = nullptr;
  double beta = 0.0;
};

class Problem {
 public:
  virtual ~Problem() = default;
  virtual Index rows() const = 0;
  virtual Index cols() const = 0;
  virtual double lipschitz() const = 0;
  virtual const PenaltySpec& penalty() const = 0;
  virtual double lambda() const = 0;

  virtual IterateCache cache(const FactoredMatrix& x, const Engine& engine) const = 0;
  virtual double loss(const IterateCache& cache, const Engine& engine) const = 0;
  // Operator for point - (1/tau) grad f(point).
  virtual std::unique_ptr<LinearOperator> gradient_step(const Extrapolation& point, double tau,
                                                        const Engine& engine) const = 0;
};

IterateCache combine_caches(const Extrapolation& point);

// F at weight lambda_t, from a cache of x.
double objective(const Problem& problem, const FactoredMatrix& x, const IterateCache& cache, double lambda_t,
                 const Engine& engine = sequential_engine());

enum class Branch { Plain, Accelerated, Fallback, Stalled };
std::string_view to_string(Branch b);
Branch parse_branch(std::string_view name);

struct IterationStats {
  int t = 0;
  double objective = 0.0;         // F_{lambda_t}(X_{t+1})
  double objective_before = 0.0;  // F_{lambda_t}(X_t)
  double lambda_t = 0.0;
  Index rank = 0;
  Index k = 0;           // warm-start columns
  double dist_sq = 0.0;  // ||X_{t+1} - C_t||_F^2
  double coef = 0.0;     // c1, or delta/2 on accepted extrapolated steps
  double margin = 0.0;   // objective_before - coef * dist_sq - objective
  Branch branch = Branch::Plain;
  int inner_iters = 0;
  bool near_fixed_point = false;
  double wall_ms = 0.0;
};

struct SolveResult {
  FactoredMatrix x;
  std::vector<IterationStats> stats;
  bool converged = false;
  double c1 = 0.0;
  double certificate_coef = 0.0;  // c1 for FaNCL, min(c1, delta/2) for FaNCL-acc
};

class InexactPsStalled : public std::runtime_error {
 public:
  InexactPsStalled(const std::string& what, FactoredMatrix best)
      : std::runtime_error(what), best_(std::move(best)) {}
  const FactoredMatrix& best() const { return best_; }

 private:
  FactoredMatrix best_;
};

struct InexactPsResult {
  FactoredMatrix x;
  Matrix v;
  int p_used = 0;
  double objective = 0.0;
  double dist_sq = 0.0;
  bool near_fixed_point = false;
};

void validate(const SolverConfig& cfg, double rho);
double initial_lambda(const SolverConfig& cfg, double lambda);

// One inexact proximal step from x (plain point).
InexactPsResult inexact_ps(const Problem& problem, const FactoredMatrix& x, const Matrix& r, double lambda_t,
                           const SolverConfig& cfg, const Engine& engine = sequential_engine());

SolveResult fancl(const Problem& problem, const SolverConfig& cfg, const Engine& engine = sequential_engine());
SolveResult fancl_acc(const Problem& problem, const SolverConfig& cfg,
                      const Engine& engine = sequential_engine());
SolveResult solve(const Problem& problem, const SolverConfig& cfg, Variant variant,
                  const Engine& engine = sequential_engine());

double continuation_step(double lambda_prev, double lambda, double nu, int t, DecayMode mode);

struct RateReport {
  bool pass = false;
  double min_dist_sq = 0.0;
  double bound = 0.0;
  double margin = 0.0;  // bound - min_dist_sq
};

// min_t dist_sq <= (F(X_1) - F(X_{T+1})) / (coef * T).
RateReport rate_certificate(const std::vector<IterationStats>& stats, double coef);

// Every step satisfies objective <= objective_before - coef * dist_sq and
// consecutive objectives do not increase. Relative slack `rtol`.
bool descent_holds(const std::vector<IterationStats>& stats, double rtol = 1e-12);

// Standard normal rows x cols matrix.
Matrix gaussian_matrix(Index rows, Index cols, std::mt19937_64& rng);

// Orthonormal basis of [a, b, extra random columns], padded with random
// columns up to min_cols and truncated to max_cols.
Matrix warm_start_basis(const Matrix& a, const Matrix& b, Index extra, Index min_cols, Index max_cols,
                        std::mt19937_64& rng, const Engine& engine = sequential_engine());

Variant parse_variant(std::string_view name);
std::string_view to_string(Variant v);

}  // namespace fancl
