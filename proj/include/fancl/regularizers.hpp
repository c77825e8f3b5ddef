#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace fancl {

class ParameterError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class MissingArgumentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class PenaltyKind { CappedL1, LSP, TNN, SCAD, MCP, NuclearNorm, L1 };

// theta is unused by NuclearNorm and L1. For TNN it is the number of
// unpenalized leading singular values.
struct PenaltySpec {
  PenaltyKind kind = PenaltyKind::NuclearNorm;
  double theta = 1.0;
};

void validate(const PenaltySpec& spec);
bool is_nonconvex(PenaltyKind kind);

std::string_view to_string(PenaltyKind kind);
// Accepts the CLI spellings: capped-l1, lsp, tnn, scad, mcp, nuclear, l1.
PenaltyKind parse_penalty_kind(std::string_view name);

// mu * r(sigma). For TNN, `index` is the 1-based position of sigma in the
// spectrum; without it the value is treated as penalized.
double penalty_value(const PenaltySpec& spec, double sigma, double mu,
                     std::optional<int> index = std::nullopt);

// Sum of penalty_value over a descending spectrum.
template <typename Range>
double penalty_spectrum(const PenaltySpec& spec, const Range& sigmas, double mu) {
  double total = 0.0;
  int i = 0;
  for (double s : sigmas) total += penalty_value(spec, s, mu, ++i);
  return total;
}

// Global minimizer of 0.5 (y - sigma)^2 + weight * penalty_value(y, mu) over
// y >= 0. Ties go to the larger root. TNN is treated as penalized (soft
// thresholding); the unpenalized branch is y = sigma.
double prox_scalar(const PenaltySpec& spec, double sigma, double mu, double weight = 1.0);

// Below this value prox_scalar returns 0. TNN needs sigma_{theta+1}.
double threshold_gamma(const PenaltySpec& spec, double mu,
                       std::optional<double> sigma_aux = std::nullopt);

// Threshold of prox_scalar(spec, ., mu, weight).
double weighted_gamma(const PenaltySpec& spec, double mu, double weight);

// Grid search over {0, step, ..., sigma + step}. Test oracle.
double prox_scalar_oracle(const PenaltySpec& spec, double sigma, double mu, double grid_step,
                          double weight = 1.0);

}  // namespace fancl
