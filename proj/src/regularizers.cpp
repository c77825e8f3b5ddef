#include "fancl/regularizers.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

namespace fancl {

namespace {

bool is_integer(double x) { return std::isfinite(x) && std::floor(x) == x; }

void check_scalars(double sigma, double mu) {
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw ParameterError("sigma must be finite and >= 0");
  if (!(mu >= 0.0) || !std::isfinite(mu)) throw ParameterError("mu must be finite and >= 0");
}

struct Candidates {
  std::array<double, 8> y{};
  int n = 0;
  void add(double v) {
    if (std::isfinite(v) && v >= 0.0) y[n++] = v;
  }
};

}  // namespace

void validate(const PenaltySpec& spec) {
  const double t = spec.theta;
  switch (spec.kind) {
    case PenaltyKind::CappedL1:
    case PenaltyKind::LSP:
    case PenaltyKind::MCP:
      if (!(t > 0.0) || !std::isfinite(t)) throw ParameterError("theta must be positive");
      break;
    case PenaltyKind::SCAD:
      if (!(t > 2.0) || !std::isfinite(t)) throw ParameterError("SCAD requires theta > 2");
      break;
    case PenaltyKind::TNN:
      if (!(t >= 1.0) || !is_integer(t)) throw ParameterError("TNN requires an integer theta >= 1");
      break;
    case PenaltyKind::NuclearNorm:
    case PenaltyKind::L1:
      break;
  }
}

bool is_nonconvex(PenaltyKind kind) {
  return kind != PenaltyKind::NuclearNorm && kind != PenaltyKind::L1;
}

std::string_view to_string(PenaltyKind kind) {
  switch (kind) {
    case PenaltyKind::CappedL1: return "capped-l1";
    case PenaltyKind::LSP: return "lsp";
    case PenaltyKind::TNN: return "tnn";
    case PenaltyKind::SCAD: return "scad";
    case PenaltyKind::MCP: return "mcp";
    case PenaltyKind::NuclearNorm: return "nuclear";
    case PenaltyKind::L1: return "l1";
  }
  return "?";
}

PenaltyKind parse_penalty_kind(std::string_view name) {
  for (auto k : {PenaltyKind::CappedL1, PenaltyKind::LSP, PenaltyKind::TNN, PenaltyKind::SCAD,
                 PenaltyKind::MCP, PenaltyKind::NuclearNorm, PenaltyKind::L1}) {
    if (to_string(k) == name) return k;
  }
  throw ParameterError("unknown penalty: " + std::string(name));
}

double penalty_value(const PenaltySpec& spec, double sigma, double mu, std::optional<int> index) {
  validate(spec);
  check_scalars(sigma, mu);
  const double t = spec.theta;
  switch (spec.kind) {
    case PenaltyKind::CappedL1:
      return mu * std::min(sigma, t);
    case PenaltyKind::LSP:
      return mu * std::log1p(sigma / t);
    case PenaltyKind::TNN:
      if (index && *index <= static_cast<int>(t)) return 0.0;
      return mu * sigma;
    case PenaltyKind::SCAD:
      if (sigma <= mu) return mu * sigma;
      if (sigma <= t * mu) return (-sigma * sigma + 2.0 * t * mu * sigma - mu * mu) / (2.0 * (t - 1.0));
      return (t + 1.0) * mu * mu / 2.0;
    case PenaltyKind::MCP:
      if (sigma <= t * mu) return mu * sigma - sigma * sigma / (2.0 * t);
      return t * mu * mu / 2.0;
    case PenaltyKind::NuclearNorm:
    case PenaltyKind::L1:
      return mu * sigma;
  }
  return 0.0;
}

double threshold_gamma(const PenaltySpec& spec, double mu, std::optional<double> sigma_aux) {
  validate(spec);
  check_scalars(0.0, mu);
  const double t = spec.theta;
  switch (spec.kind) {
    case PenaltyKind::CappedL1:
      return std::min(std::sqrt(2.0 * t * mu), mu);
    case PenaltyKind::LSP:
      return std::min(mu / t, t);
    case PenaltyKind::TNN:
      if (!sigma_aux) throw MissingArgumentError("TNN threshold needs sigma_{theta+1}");
      return std::max(mu, *sigma_aux);
    case PenaltyKind::SCAD:
      return mu;
    case PenaltyKind::MCP:
      return (t > 0.0 && t < 1.0) ? std::sqrt(t) * mu : mu;
    case PenaltyKind::NuclearNorm:
    case PenaltyKind::L1:
      return mu;
  }
  return mu;
}

double weighted_gamma(const PenaltySpec& spec, double mu, double weight) {
  validate(spec);
  if (!(weight > 0.0)) throw ParameterError("weight must be positive");
  switch (spec.kind) {
    case PenaltyKind::SCAD:
      // Proven threshold only for weight <= 1; otherwise report no threshold.
      return weight <= 1.0 ? weight * mu : 0.0;
    case PenaltyKind::MCP:
      return threshold_gamma({PenaltyKind::MCP, spec.theta / weight}, weight * mu);
    case PenaltyKind::TNN:
      return weight * mu;
    default:
      return threshold_gamma(spec, weight * mu);
  }
}

double prox_scalar(const PenaltySpec& spec, double sigma, double mu, double weight) {
  validate(spec);
  check_scalars(sigma, mu);
  if (!(weight > 0.0)) throw ParameterError("weight must be positive");
  if (sigma == 0.0) return 0.0;
  if (sigma <= weighted_gamma(spec, mu, weight)) return 0.0;

  const double t = spec.theta;
  const double c = weight * mu;
  Candidates cand;
  cand.add(0.0);
  switch (spec.kind) {
    case PenaltyKind::NuclearNorm:
    case PenaltyKind::L1:
    case PenaltyKind::TNN:
      return std::max(sigma - c, 0.0);
    case PenaltyKind::CappedL1:
      cand.add(std::clamp(sigma - c, 0.0, t));
      cand.add(std::max(sigma, t));
      break;
    case PenaltyKind::LSP: {
      const double disc = (sigma + t) * (sigma + t) - 4.0 * c;
      if (disc >= 0.0) {
        const double r = std::sqrt(disc);
        cand.add(0.5 * ((sigma - t) + r));
        cand.add(0.5 * ((sigma - t) - r));
      }
      break;
    }
    case PenaltyKind::SCAD: {
      cand.add(std::clamp(sigma - c, 0.0, mu));
      cand.add(mu);
      cand.add(t * mu);
      const double denom = t - 1.0 - weight;
      if (denom > 0.0) {
        cand.add(std::clamp((sigma * (t - 1.0) - weight * t * mu) / denom, mu, t * mu));
      }
      cand.add(std::max(sigma, t * mu));
      break;
    }
    case PenaltyKind::MCP: {
      const double denom = 1.0 - weight / t;
      if (denom > 0.0) cand.add(std::clamp((sigma - c) / denom, 0.0, t * mu));
      cand.add(t * mu);
      cand.add(std::max(sigma, t * mu));
      break;
    }
  }

  auto h = [&](double y) { return 0.5 * (y - sigma) * (y - sigma) + weight * penalty_value(spec, y, mu); };
  double best_y = 0.0;
  double best_h = h(0.0);
  for (int i = 0; i < cand.n; ++i) {
    const double y = cand.y[i];
    const double v = h(y);
    const double tol = 1e-12 * std::max(1.0, std::abs(best_h));
    if (v < best_h - tol || (std::abs(v - best_h) <= tol && y > best_y)) {
      best_y = y;
      best_h = std::min(v, best_h);
    }
  }
  return best_y;
}

double prox_scalar_oracle(const PenaltySpec& spec, double sigma, double mu, double grid_step,
                          double weight) {
  validate(spec);
  check_scalars(sigma, mu);
  if (!(grid_step > 0.0)) throw ParameterError("grid_step must be positive");
  const auto steps = static_cast<long long>(std::ceil(sigma / grid_step)) + 1;
  double best_y = 0.0;
  double best_h = std::numeric_limits<double>::infinity();
  for (long long i = 0; i <= steps; ++i) {
    const double y = static_cast<double>(i) * grid_step;
    const double v = 0.5 * (y - sigma) * (y - sigma) + weight * penalty_value(spec, y, mu);
    if (v <= best_h) {
      best_h = v;
      best_y = y;
    }
  }
  return best_y;
}

}  // namespace fancl
