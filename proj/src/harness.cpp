#include "fancl/harness.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

namespace fancl {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// k distinct values from [0, n), in a random order.
std::vector<std::int64_t> sample_distinct(std::int64_t n, std::int64_t k, std::mt19937_64& rng) {
  std::unordered_set<std::int64_t> chosen;
  chosen.reserve(static_cast<std::size_t>(k) * 2);
  std::vector<std::int64_t> out;
  out.reserve(static_cast<std::size_t>(k));
  for (std::int64_t j = n - k; j < n; ++j) {
    const std::int64_t t = std::uniform_int_distribution<std::int64_t>(0, j)(rng);
    const std::int64_t pick = chosen.insert(t).second ? t : j;
    if (pick == j) chosen.insert(j);
    out.push_back(pick);
  }
  std::shuffle(out.begin(), out.end(), rng);
  return out;
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

template <typename T>
std::optional<T> parse_number(std::string_view s) {
  T v{};
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || ptr != end || s.empty()) return std::nullopt;
  return v;
}

std::vector<std::string> split_on(std::string_view s, std::string_view sep) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  for (;;) {
    const auto next = s.find(sep, pos);
    if (next == std::string_view::npos) {
      out.push_back(trim(s.substr(pos)));
      return out;
    }
    out.push_back(trim(s.substr(pos, next - pos)));
    pos = next + sep.size();
  }
}

std::vector<std::string> split_fields(const std::string& line, TripletFormat format) {
  if (format == TripletFormat::Csv) return split_on(line, ",");
  if (format == TripletFormat::MovielensDat) return split_on(line, "::");
  std::vector<std::string> out;
  std::istringstream is(line);
  for (std::string tok; is >> tok;) out.push_back(tok);
  return out;
}

TripletFormat detect_format(const std::string& line) {
  if (line.find("::") != std::string::npos) return TripletFormat::MovielensDat;
  if (line.find(',') != std::string::npos) return TripletFormat::Csv;
  return TripletFormat::Whitespace;
}

std::vector<Index> remap(const std::vector<std::int64_t>& raw, std::vector<std::int64_t>& ids) {
  ids = raw;
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  std::vector<Index> out(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    out[i] = std::lower_bound(ids.begin(), ids.end(), raw[i]) - ids.begin();
  }
  return out;
}

struct FitOutcome {
  SolveResult result;
  double seconds = 0.0;
  bool stalled = false;
};

FitOutcome fit_completion(const SparseObserved& observed, const PenaltySpec& penalty, double lambda,
                          const SolverConfig& cfg, Variant variant, const Engine& engine) {
  FitOutcome out;
  const CompletionProblem prob(observed, penalty, lambda);
  const auto t0 = Clock::now();
  try {
    out.result = mc_fit(prob, cfg, variant, engine);
  } catch (const InexactPsStalled& e) {
    out.stalled = true;
    out.result.x = e.best();
  }
  out.seconds = seconds_since(t0);
  return out;
}

std::vector<double> scaled(double base, const std::vector<double>& mults) {
  std::vector<double> out;
  for (double v : mults) out.push_back(base * v);
  return out;
}

SolverConfig rpca_solver(const ExperimentConfig& cfg) {
  SolverConfig s = cfg.solver;
  if (!cfg.solver_tau_set) s.tau = 2.1;
  return s;
}

}  // namespace

// ---- synthetic data ----

Index SynthMcSpec::sample_count() const {
  return static_cast<Index>(std::ceil(2.0 * static_cast<double>(m) * static_cast<double>(k) *
                                      std::log(static_cast<double>(m))));
}

SynthMc gen_synth_mc(const SynthMcSpec& spec) {
  if (spec.m < 2 || spec.k < 1 || spec.k > spec.m) throw ParameterError("synthetic completion needs 1 <= k <= m, m >= 2");
  if (!(spec.noise_sigma >= 0.0)) throw ParameterError("noise_sigma must be >= 0");
  if (!(spec.train_fraction > 0.0 && spec.train_fraction <= 1.0)) throw ParameterError("train_fraction must lie in (0, 1]");
  const Index m = spec.m;
  const Index count = spec.sample_count();
  if (count > m * m) throw ParameterError("sample count exceeds m^2");
  std::mt19937_64 rng(spec.seed);
  SynthMc out;
  out.u = gaussian_matrix(m, spec.k, rng);
  out.v = gaussian_matrix(spec.k, m, rng);
  const auto cells = sample_distinct(m * m, count, rng);
  std::normal_distribution<double> nd(0.0, 1.0);
  const auto n_train = static_cast<std::size_t>(std::llround(spec.train_fraction * static_cast<double>(count)));
  std::vector<Triplet> train, validation;
  for (std::size_t q = 0; q < cells.size(); ++q) {
    const Index i = cells[q] / m;
    const Index j = cells[q] % m;
    const double value = out.u.row(i).dot(out.v.col(j)) + spec.noise_sigma * nd(rng);
    (q < n_train ? train : validation).push_back({i, j, value});
  }
  out.train = SparseObserved::from_triplets(m, m, train);
  out.validation = SparseObserved::from_triplets(m, m, validation);
  return out;
}

Index SynthRpcaSpec::rank() const {
  return k > 0 ? k : static_cast<Index>(std::ceil(0.01 * static_cast<double>(m) - 1e-9));
}

Index SynthRpcaSpec::outlier_count() const {
  return static_cast<Index>(std::llround(outlier_fraction * static_cast<double>(m) * static_cast<double>(m)));
}

SynthRpca gen_synth_rpca(const SynthRpcaSpec& spec) {
  if (spec.m < 2) throw ParameterError("synthetic RPCA needs m >= 2");
  if (!(spec.outlier_fraction >= 0.0 && spec.outlier_fraction <= 1.0)) {
    throw ParameterError("outlier_fraction must lie in [0, 1]");
  }
  if (!(spec.noise_sigma >= 0.0)) throw ParameterError("noise_sigma must be >= 0");
  const Index m = spec.m;
  const Index k = std::max<Index>(1, spec.rank());
  std::mt19937_64 rng(spec.seed);
  SynthRpca out;
  const Matrix u = gaussian_matrix(m, k, rng);
  const Matrix v = gaussian_matrix(k, m, rng);
  out.low_rank = u * v;
  const double magnitude = 5.0 * out.low_rank.cwiseAbs().maxCoeff();
  out.sparse = Matrix::Zero(m, m);
  std::bernoulli_distribution coin(0.5);
  for (std::int64_t cell : sample_distinct(m * m, spec.outlier_count(), rng)) {
    out.sparse(cell % m, cell / m) = coin(rng) ? magnitude : -magnitude;
  }
  Matrix noise = gaussian_matrix(m, m, rng) * spec.noise_sigma;
  out.observed = out.low_rank + out.sparse + noise;
  std::vector<Index> cols(static_cast<std::size_t>(m));
  std::iota(cols.begin(), cols.end(), Index{0});
  std::shuffle(cols.begin(), cols.end(), rng);
  out.train_cols.assign(cols.begin(), cols.begin() + m / 2);
  out.test_cols.assign(cols.begin() + m / 2, cols.end());
  std::sort(out.train_cols.begin(), out.train_cols.end());
  std::sort(out.test_cols.begin(), out.test_cols.end());
  return out;
}

// ---- ratings ----

TripletFormat parse_triplet_format(std::string_view name) {
  if (name == "auto") return TripletFormat::Auto;
  if (name == "whitespace") return TripletFormat::Whitespace;
  if (name == "csv") return TripletFormat::Csv;
  if (name == "movielens-dat" || name == "dat") return TripletFormat::MovielensDat;
  throw ConfigError("unknown triplet format '" + std::string(name) + "'");
}

RatingsDataset parse_triplets(std::istream& in, TripletFormat format) {
  std::vector<std::int64_t> users, items;
  std::vector<double> ratings;
  std::set<std::pair<std::int64_t, std::int64_t>> seen;
  std::string line;
  std::size_t lineno = 0;
  bool first = true;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string body = trim(line);
    if (body.empty() || body[0] == '#') continue;
    if (format == TripletFormat::Auto) format = detect_format(body);
    const auto fields = split_fields(body, format);
    const bool was_first = first;
    first = false;
    if (fields.size() < 3) throw ParseError("line " + std::to_string(lineno) + ": expected user item rating", lineno);
    const auto u = parse_number<std::int64_t>(fields[0]);
    const auto i = parse_number<std::int64_t>(fields[1]);
    const auto r = parse_number<double>(fields[2]);
    if (!u && was_first && format == TripletFormat::Csv) continue;
    if (!u || !i || !r || !std::isfinite(*r)) {
      throw ParseError("line " + std::to_string(lineno) + ": malformed triplet '" + body + "'", lineno);
    }
    if (!seen.insert({*u, *i}).second) {
      throw ParseError("line " + std::to_string(lineno) + ": duplicate rating for user " + fields[0] + ", item " +
                           fields[1],
                       lineno);
    }
    users.push_back(*u);
    items.push_back(*i);
    ratings.push_back(*r);
  }
  RatingsDataset data;
  const auto ui = remap(users, data.user_ids);
  const auto ii = remap(items, data.item_ids);
  data.triplets.reserve(ratings.size());
  for (std::size_t t = 0; t < ratings.size(); ++t) data.triplets.push_back({ui[t], ii[t], ratings[t]});
  return data;
}

RatingsDataset load_triplets(const std::filesystem::path& path, TripletFormat format) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return parse_triplets(in, format);
}

void assign_splits(RatingsDataset& data, double train, double validation, std::uint64_t seed) {
  if (!(train > 0.0) || !(validation >= 0.0) || train + validation > 1.0 + 1e-12) {
    throw ParameterError("split fractions must be positive and sum to at most 1");
  }
  const std::size_t n = data.triplets.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_train = static_cast<std::size_t>(std::llround(train * static_cast<double>(n)));
  const auto n_val = std::min(n - n_train, static_cast<std::size_t>(std::llround(validation * static_cast<double>(n))));
  data.split.assign(n, Split::Test);
  for (std::size_t q = 0; q < n; ++q) {
    data.split[order[q]] = q < n_train ? Split::Train : (q < n_train + n_val ? Split::Validation : Split::Test);
  }
}

SparseObserved split_matrix(const RatingsDataset& data, Split which) {
  if (data.split.size() != data.triplets.size()) throw std::logic_error("splits have not been assigned");
  std::vector<Triplet> out;
  for (std::size_t t = 0; t < data.triplets.size(); ++t) {
    if (data.split[t] == which) out.push_back(data.triplets[t]);
  }
  return SparseObserved::from_triplets(data.users(), data.items(), out);
}

SparseObserved merge_observed(const SparseObserved& a, const SparseObserved& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw ShapeError("merge: shapes differ");
  auto t = a.triplets();
  const auto tb = b.triplets();
  t.insert(t.end(), tb.begin(), tb.end());
  return SparseObserved::from_triplets(a.rows(), a.cols(), t);
}

// ---- metrics ----

std::string_view to_string(MetricKind k) {
  switch (k) {
    case MetricKind::NmseMc: return "nmse_mc";
    case MetricKind::NmseRpca: return "nmse_rpca";
    case MetricKind::Rmse: return "rmse";
    case MetricKind::Psnr: return "psnr";
    case MetricKind::SupportAcc: return "support_acc";
  }
  return "?";
}

MetricKind parse_metric_kind(std::string_view name) {
  for (MetricKind k : {MetricKind::NmseMc, MetricKind::NmseRpca, MetricKind::Rmse, MetricKind::Psnr,
                       MetricKind::SupportAcc}) {
    if (to_string(k) == name) return k;
  }
  throw ParseError("unknown metric '" + std::string(name) + "'", 0);
}

double nmse_mc(const FactoredMatrix& x, const Matrix& u, const Matrix& v,
               const std::vector<const ObservationPattern*>& observed) {
  const Index m = u.rows();
  const Index n = v.cols();
  if (x.rows() != m || x.cols() != n || u.cols() != v.rows()) throw ShapeError("nmse_mc: shapes differ");
  const Matrix us = x.U * x.S.asDiagonal();
  double obs_err = 0.0, obs_ref = 0.0;
  Index count = 0;
  for (const auto* p : observed) {
    if (p->m != m || p->n != n) throw ShapeError("nmse_mc: pattern shape differs");
    count += p->nnz();
    for (Index i = 0; i < m; ++i) {
      for (Index k = p->row_ptr[i]; k < p->row_ptr[i + 1]; ++k) {
        const Index j = p->col_idx[k];
        const double truth = u.row(i).dot(v.col(j));
        const double pred = x.rank() == 0 ? 0.0 : us.row(i).dot(x.V.row(j));
        obs_err += (pred - truth) * (pred - truth);
        obs_ref += truth * truth;
      }
    }
  }
  if (count >= m * n) throw ShapeError("nmse_mc: no unobserved entries");
  StackedLowRank diff;
  diff.left.resize(m, x.rank() + u.cols());
  diff.left << us, -u;
  diff.right.resize(n, x.rank() + u.cols());
  diff.right << x.V, v.transpose();
  StackedLowRank truth{u, v.transpose()};
  const double err = std::max(0.0, frob_norm_sq(diff) - obs_err);
  const double ref = std::max(0.0, frob_norm_sq(truth) - obs_ref);
  if (ref == 0.0) throw std::domain_error("nmse_mc: reference is zero on the unobserved entries");
  return std::sqrt(err / ref);
}

double rmse(const FactoredMatrix& x, const SparseObserved& test) {
  if (test.nnz() == 0) throw ShapeError("rmse: empty test set");
  if (x.rows() != test.rows() || x.cols() != test.cols()) throw ShapeError("rmse: shapes differ");
  const auto pred = project_omega(x, test.pattern);
  return std::sqrt(observed_residual_sq(pred, test.values) / static_cast<double>(test.nnz()));
}

double psnr(const Matrix& x, const Matrix& reference) {
  if (x.rows() != reference.rows() || x.cols() != reference.cols()) throw ShapeError("psnr: shapes differ");
  if (x.size() == 0) throw ShapeError("psnr: empty matrix");
  const double mse = (x - reference).squaredNorm() / static_cast<double>(x.size());
  return -10.0 * std::log10(mse);
}

double nmse_rpca(const Matrix& x_plus_s, const Matrix& truth, const std::vector<Index>& cols) {
  if (x_plus_s.rows() != truth.rows() || x_plus_s.cols() != truth.cols()) throw ShapeError("nmse_rpca: shapes differ");
  if (cols.empty()) throw ShapeError("nmse_rpca: empty column set");
  double err = 0.0, ref = 0.0;
  for (Index j : cols) {
    if (j < 0 || j >= truth.cols()) throw ShapeError("nmse_rpca: column out of range");
    err += (x_plus_s.col(j) - truth.col(j)).squaredNorm();
    ref += truth.col(j).squaredNorm();
  }
  if (ref == 0.0) throw std::domain_error("nmse_rpca: reference is zero");
  return std::sqrt(err / ref);
}

// ---- config ----

namespace {

double to_double(const std::string& key, const std::string& v) {
  const auto d = parse_number<double>(v);
  if (!d || !std::isfinite(*d)) throw ConfigError(key + ": expected a number, got '" + v + "'");
  return *d;
}

long long to_int(const std::string& key, const std::string& v) {
  const auto d = parse_number<long long>(v);
  if (!d) throw ConfigError(key + ": expected an integer, got '" + v + "'");
  return *d;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

std::vector<double> to_list(const std::string& key, const std::string& v) {
  std::vector<double> out;
  if (trim(v).empty()) return out;
  for (const auto& item : split_on(v, ",")) out.push_back(to_double(key, item));
  return out;
}

Index to_positive(const std::string& key, const std::string& v) {
  const Index x = to_int(key, v);
  if (x < 1) throw ConfigError(key + ": expected a positive integer, got '" + v + "'");
  return x;
}

template <typename F>
auto wrap(const std::string& key, F&& f) {
  try {
    return f();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(key + ": " + e.what());
  }
}

}  // namespace

void set_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
  auto& s = cfg.solver;
  if (key == "problem") {
    if (value == "synth-mc") cfg.problem = ProblemKind::SynthMc;
    else if (value == "synth-rpca") cfg.problem = ProblemKind::SynthRpca;
    else if (value == "ratings") cfg.problem = ProblemKind::Ratings;
    else throw ConfigError("problem: expected synth-mc, synth-rpca or ratings, got '" + value + "'");
  } else if (key == "m") {
    cfg.m = to_positive(key, value);
  } else if (key == "k") {
    cfg.k = to_positive(key, value);
  } else if (key == "noise_sigma") {
    cfg.noise_sigma = to_double(key, value);
  } else if (key == "outlier_fraction") {
    cfg.outlier_fraction = to_double(key, value);
  } else if (key == "data") {
    cfg.data = value;
  } else if (key == "format") {
    cfg.format = wrap(key, [&] { return parse_triplet_format(value); });
  } else if (key == "train_fraction") {
    cfg.train_fraction = to_double(key, value);
  } else if (key == "validation_fraction") {
    cfg.validation_fraction = to_double(key, value);
  } else if (key == "penalty") {
    cfg.penalty = wrap(key, [&] { return parse_penalty_kind(value); });
  } else if (key == "theta") {
    cfg.theta = to_double(key, value);
  } else if (key == "theta_grid") {
    cfg.theta_grid = to_list(key, value);
  } else if (key == "lambda_grid") {
    cfg.lambda_grid = to_list(key, value);
  } else if (key == "lambda_multipliers") {
    cfg.lambda_multipliers = to_list(key, value);
  } else if (key == "upsilon_grid") {
    cfg.upsilon_grid = to_list(key, value);
  } else if (key == "upsilon_multipliers") {
    cfg.upsilon_multipliers = to_list(key, value);
  } else if (key == "sparse_penalty") {
    cfg.sparse_penalty = wrap(key, [&] { return parse_penalty_kind(value); });
  } else if (key == "sparse_theta_factor") {
    cfg.sparse_theta_factor = to_double(key, value);
  } else if (key == "refit") {
    cfg.refit = to_bool(key, value);
  } else if (key == "variant") {
    cfg.variant = wrap(key, [&] { return parse_variant(value); });
  } else if (key == "tune_variant") {
    cfg.tune_variant = wrap(key, [&] { return parse_variant(value); });
  } else if (key == "threads") {
    cfg.threads = static_cast<int>(to_positive(key, value));
  } else if (key == "seed") {
    cfg.seed = static_cast<std::uint64_t>(to_int(key, value));
  } else if (key == "repeats") {
    cfg.repeats = static_cast<int>(to_positive(key, value));
  } else if (key == "tau") {
    s.tau = to_double(key, value);
    cfg.solver_tau_set = true;
  } else if (key == "lambda0") {
    s.lambda0 = to_double(key, value);
  } else if (key == "lambda0_factor") {
    s.lambda0_factor = to_double(key, value);
  } else if (key == "nu") {
    s.nu = to_double(key, value);
  } else if (key == "decay") {
    if (value == "geometric") s.decay_mode = DecayMode::Geometric;
    else if (value == "power") s.decay_mode = DecayMode::PowerOfNu;
    else throw ConfigError("decay: expected geometric or power, got '" + value + "'");
  } else if (key == "delta") {
    s.delta = to_double(key, value);
  } else if (key == "power_iters") {
    s.power_iters = static_cast<int>(to_int(key, value));
  } else if (key == "p_max") {
    s.p_max = static_cast<int>(to_int(key, value));
  } else if (key == "max_iters") {
    s.max_iters = static_cast<int>(to_int(key, value));
  } else if (key == "tol") {
    s.tol = to_double(key, value);
  } else if (key == "slack_cols") {
    s.slack_cols = static_cast<int>(to_int(key, value));
  } else if (key == "permissive") {
    s.permissive = to_bool(key, value);
  } else {
    throw ConfigError("unknown key '" + key + "'");
  }
}

ExperimentConfig parse_config(std::istream& in) {
  ExperimentConfig cfg;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    const std::string body = trim(hash == std::string::npos ? line : line.substr(0, hash));
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    try {
      set_config_value(cfg, trim(body.substr(0, eq)), trim(body.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  return parse_config(in);
}

namespace {

void validate(const ExperimentConfig& cfg) {
  if (cfg.repeats < 1) throw ConfigError("repeats must be >= 1");
  if (cfg.threads < 1) throw ConfigError("threads must be >= 1");
  if (cfg.problem != ProblemKind::Ratings && cfg.m < 2) throw ConfigError("m must be >= 2");
  if (cfg.problem == ProblemKind::Ratings && cfg.data.empty()) throw ConfigError("ratings problems need data");
  for (const auto* list : {&cfg.lambda_grid, &cfg.lambda_multipliers, &cfg.upsilon_grid, &cfg.upsilon_multipliers,
                           &cfg.theta_grid}) {
    for (double v : *list) {
      if (!(v > 0.0)) throw ConfigError("grid values must be positive");
    }
  }
}

}  // namespace

std::vector<double> default_lambda_multipliers() {
  std::vector<double> out;
  for (int i = 0; i < 8; ++i) out.push_back(std::pow(10.0, 0.5 + 2.0 * i / 7.0));
  return out;
}

double lambda_heuristic(const SparseObserved& observed) {
  if (observed.nnz() == 0) throw ShapeError("lambda_heuristic: no observed entries");
  double sq = 0.0;
  for (double v : observed.values) sq += v * v;
  return 0.1 * std::sqrt(sq) / std::sqrt(static_cast<double>(observed.nnz()));
}

PenaltySpec default_penalty(PenaltyKind kind, double lambda, std::optional<double> theta) {
  if (theta) return {kind, *theta};
  switch (kind) {
    case PenaltyKind::CappedL1: return {kind, 2.0 * lambda};
    case PenaltyKind::LSP: return {kind, std::sqrt(lambda)};
    case PenaltyKind::TNN: return {kind, 3.0};
    case PenaltyKind::SCAD: return {kind, 3.7};
    case PenaltyKind::MCP: return {kind, 2.0};
    case PenaltyKind::NuclearNorm:
    case PenaltyKind::L1: return {kind, 1.0};
  }
  return {kind, 1.0};
}

TuneResult tune_completion(const SparseObserved& train, const SparseObserved& validation, PenaltyKind kind,
                           const std::vector<double>& lambdas, const std::vector<std::optional<double>>& thetas,
                           const SolverConfig& cfg, Variant variant, int threads) {
  if (lambdas.empty() || thetas.empty()) throw ConfigError("empty tuning grid");
  const ParallelEngine engine(make_partition(train.rows(), train.cols(), threads, cfg.seed));
  TuneResult out;
  out.best.score = std::numeric_limits<double>::infinity();
  for (double lambda : lambdas) {
    for (const auto& theta : thetas) {
      const PenaltySpec pen = default_penalty(kind, lambda, theta);
      const auto fit = fit_completion(train, pen, lambda, cfg, variant, engine);
      GridPoint g;
      g.lambda = lambda;
      g.theta = pen.theta;
      g.rank = fit.result.x.rank();
      g.score = fit.stalled ? std::numeric_limits<double>::infinity() : rmse(fit.result.x, validation);
      out.grid.push_back(g);
      if (g.score < out.best.score || out.grid.size() == 1) out.best = g;
    }
  }
  return out;
}

double upsilon_heuristic(const Matrix& observed) {
  if (observed.size() == 0) throw ShapeError("upsilon_heuristic: empty matrix");
  return 0.1 * observed.norm() / std::sqrt(static_cast<double>(observed.size()));
}

RpcaTuneResult tune_rpca(const SynthRpca& data, PenaltyKind kind, const std::vector<double>& lambdas,
                         const std::vector<double>& upsilons, const ExperimentConfig& cfg) {
  if (lambdas.empty() || upsilons.empty()) throw ConfigError("empty tuning grid");
  const SolverConfig solver = rpca_solver(cfg);
  const Matrix truth = data.low_rank + data.sparse;
  std::vector<RpcaResult> fits;
  std::vector<double> times;
  RpcaTuneResult out;
  for (double lambda : lambdas) {
    for (double ups : upsilons) {
      RpcaProblem prob{data.observed, default_penalty(kind, lambda, cfg.theta), lambda,
                       PenaltySpec{cfg.sparse_penalty, cfg.sparse_theta_factor * ups}, ups};
      const auto t0 = Clock::now();
      GridPoint g;
      g.lambda = lambda;
      g.theta = prob.low_rank_penalty.theta;
      g.upsilon = ups;
      try {
        fits.push_back(rpca_fit(prob, solver));
        g.score = nmse_rpca(fits.back().x.dense() + fits.back().s, truth, data.train_cols);
      } catch (const InexactPsStalled& e) {
        fits.push_back(RpcaResult{e.best(), Matrix::Zero(data.observed.rows(), data.observed.cols()), {}, false, 0, 0});
        g.score = std::numeric_limits<double>::infinity();
      }
      times.push_back(seconds_since(t0));
      g.rank = fits.back().x.rank();
      out.grid.push_back(g);
    }
  }
  double best_score = std::numeric_limits<double>::infinity();
  for (const auto& g : out.grid) best_score = std::min(best_score, g.score);
  std::size_t pick = 0;
  bool found = false;
  for (std::size_t i = 0; i < out.grid.size(); ++i) {
    const auto& g = out.grid[i];
    if (!(g.score <= 1.01 * best_score)) continue;
    if (!found || g.upsilon > out.grid[pick].upsilon ||
        (g.upsilon == out.grid[pick].upsilon && g.score < out.grid[pick].score)) {
      pick = i;
      found = true;
    }
  }
  out.best = out.grid[pick];
  out.fit = std::move(fits[pick]);
  out.fit_seconds = times[pick];
  return out;
}

// ---- experiments ----

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  validate(cfg);
  ExperimentResult res;
  const Variant tune_variant = cfg.tune_variant.value_or(cfg.variant);
  const std::vector<double> lmults = cfg.lambda_multipliers.empty()
                                         ? (cfg.problem == ProblemKind::SynthRpca ? std::vector<double>{0.5, 1.0, 2.0}
                                                                                  : default_lambda_multipliers())
                                         : cfg.lambda_multipliers;
  std::vector<std::optional<double>> thetas;
  if (cfg.theta_grid.empty()) thetas.push_back(cfg.theta);
  for (double t : cfg.theta_grid) thetas.push_back(t);

  std::optional<RatingsDataset> ratings;
  if (cfg.problem == ProblemKind::Ratings) ratings = load_triplets(cfg.data, cfg.format);

  for (int r = 0; r < cfg.repeats; ++r) {
    const std::uint64_t seed = cfg.seed + static_cast<std::uint64_t>(r);
    RunRecord rec;
    rec.penalty = std::string(to_string(cfg.penalty));
    rec.variant = std::string(to_string(cfg.variant));
    rec.repeat = r;
    rec.seed = seed;
    SolverConfig solver = cfg.solver;
    solver.seed = seed;

    if (cfg.problem == ProblemKind::SynthRpca) {
      SynthRpcaSpec spec;
      spec.m = cfg.m;
      spec.k = cfg.k;
      spec.outlier_fraction = cfg.outlier_fraction;
      spec.noise_sigma = cfg.noise_sigma;
      spec.seed = seed;
      const auto data = gen_synth_rpca(spec);
      const double ups_h = upsilon_heuristic(data.observed);
      const auto upsilons = !cfg.upsilon_grid.empty()
                                ? cfg.upsilon_grid
                                : scaled(ups_h, cfg.upsilon_multipliers.empty() ? std::vector<double>{0.5, 1.0, 2.0}
                                                                                : cfg.upsilon_multipliers);
      const double lam_h = std::sqrt(static_cast<double>(cfg.m)) * ups_h;
      const auto lambdas = !cfg.lambda_grid.empty() ? cfg.lambda_grid : scaled(lam_h, lmults);
      ExperimentConfig c = cfg;
      c.solver.seed = seed;
      auto tuned = tune_rpca(data, cfg.penalty, lambdas, upsilons, c);
      rec.variant = std::string(to_string(Variant::FanclAcc));
      rec.lambda = tuned.best.lambda;
      rec.theta = tuned.best.theta;
      rec.upsilon = tuned.best.upsilon;
      rec.metric = MetricKind::NmseRpca;
      rec.value = nmse_rpca(tuned.fit.x.dense() + tuned.fit.s, data.low_rank + data.sparse, data.test_cols);
      rec.support = support_accuracy(tuned.fit.s, data.sparse);
      rec.rank = tuned.fit.x.rank();
      rec.iterations = static_cast<int>(tuned.fit.stats.size());
      rec.seconds = tuned.fit_seconds;
      rec.converged = tuned.fit.converged;
      res.logs.push_back(std::move(tuned.fit.stats));
      res.runs.push_back(rec);
      continue;
    }

    SparseObserved train, validation, test;
    SynthMc synth;
    if (cfg.problem == ProblemKind::SynthMc) {
      SynthMcSpec spec;
      spec.m = cfg.m;
      spec.k = cfg.k;
      spec.noise_sigma = cfg.noise_sigma;
      spec.train_fraction = cfg.train_fraction;
      spec.seed = seed;
      synth = gen_synth_mc(spec);
      train = synth.train;
      validation = synth.validation;
    } else {
      assign_splits(*ratings, cfg.train_fraction, cfg.validation_fraction, seed);
      train = split_matrix(*ratings, Split::Train);
      validation = split_matrix(*ratings, Split::Validation);
      test = split_matrix(*ratings, Split::Test);
    }
    const auto lambdas = !cfg.lambda_grid.empty() ? cfg.lambda_grid : scaled(lambda_heuristic(train), lmults);
    TuneResult tuned;
    if (lambdas.size() == 1 && thetas.size() == 1) {
      // Nothing to choose from.
      tuned.best.lambda = lambdas.front();
      tuned.best.theta = default_penalty(cfg.penalty, lambdas.front(), thetas.front()).theta;
      tuned.best.score = std::numeric_limits<double>::quiet_NaN();
      tuned.grid.push_back(tuned.best);
    } else {
      tuned = tune_completion(train, validation, cfg.penalty, lambdas, thetas, solver, tune_variant, cfg.threads);
    }
    const SparseObserved final_data = cfg.refit && validation.nnz() > 0 ? merge_observed(train, validation) : train;
    const ParallelEngine engine(make_partition(train.rows(), train.cols(), cfg.threads, seed));
    const PenaltySpec pen = default_penalty(cfg.penalty, tuned.best.lambda, tuned.best.theta);
    auto fit = fit_completion(final_data, pen, tuned.best.lambda, solver, cfg.variant, engine);
    rec.lambda = tuned.best.lambda;
    rec.theta = pen.theta;
    if (cfg.problem == ProblemKind::SynthMc) {
      rec.metric = MetricKind::NmseMc;
      rec.value = nmse_mc(fit.result.x, synth.u, synth.v, {train.pattern.get(), validation.pattern.get()});
    } else {
      rec.metric = MetricKind::Rmse;
      rec.value = rmse(fit.result.x, test);
    }
    rec.rank = fit.result.x.rank();
    rec.iterations = static_cast<int>(fit.result.stats.size());
    rec.seconds = fit.seconds;
    rec.converged = fit.result.converged && !fit.stalled;
    res.logs.push_back(std::move(fit.result.stats));
    res.runs.push_back(rec);
  }
  res.summary = summarize(res.runs);
  return res;
}

SummaryRow summarize(const std::vector<RunRecord>& runs) {
  if (runs.empty()) throw std::invalid_argument("summarize: no runs");
  SummaryRow s;
  s.penalty = runs.front().penalty;
  s.variant = runs.front().variant;
  s.metric = runs.front().metric;
  s.runs = static_cast<int>(runs.size());
  const double n = static_cast<double>(runs.size());
  auto mean_std = [&](auto get, double& mean, double& sd) {
    mean = 0.0;
    for (const auto& r : runs) mean += get(r);
    mean /= n;
    double ss = 0.0;
    for (const auto& r : runs) ss += (get(r) - mean) * (get(r) - mean);
    sd = runs.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
  };
  double unused = 0.0;
  mean_std([](const RunRecord& r) { return r.value; }, s.mean, s.stddev);
  mean_std([](const RunRecord& r) { return r.seconds; }, s.seconds_mean, s.seconds_std);
  mean_std([](const RunRecord& r) { return static_cast<double>(r.rank); }, s.rank_mean, unused);
  mean_std([](const RunRecord& r) { return static_cast<double>(r.iterations); }, s.iterations_mean, unused);
  if (runs.front().support >= 0.0) mean_std([](const RunRecord& r) { return r.support; }, s.support_mean, unused);
  s.rank_min = s.rank_max = runs.front().rank;
  for (const auto& r : runs) {
    s.rank_min = std::min(s.rank_min, r.rank);
    s.rank_max = std::max(s.rank_max, r.rank);
  }
  return s;
}

// ---- result files ----

namespace {

constexpr const char* kRunsHeader =
    "penalty,variant,repeat,seed,lambda,theta,upsilon,metric,value,support,rank,iterations,seconds,converged";
constexpr const char* kSummaryHeader =
    "penalty,variant,metric,runs,mean,std,support_mean,rank_mean,rank_min,rank_max,seconds_mean,seconds_std,"
    "iterations_mean";

std::vector<std::string> read_csv_rows(std::istream& in, const char* header, std::size_t& lineno) {
  std::string line;
  lineno = 0;
  if (!std::getline(in, line) || trim(line) != header) throw ParseError("unexpected csv header", 1);
  lineno = 1;
  std::vector<std::string> rows;
  while (std::getline(in, line)) {
    ++lineno;
    if (!trim(line).empty()) rows.push_back(line);
  }
  return rows;
}

template <typename T>
T field(const std::vector<std::string>& f, std::size_t i, std::size_t lineno) {
  if (i >= f.size()) throw ParseError("line " + std::to_string(lineno) + ": missing field", lineno);
  const auto v = parse_number<T>(f[i]);
  if (!v) throw ParseError("line " + std::to_string(lineno) + ": bad field '" + f[i] + "'", lineno);
  return *v;
}

}  // namespace

void write_runs_csv(std::ostream& out, const std::vector<RunRecord>& runs) {
  out << kRunsHeader << '\n' << std::setprecision(17);
  for (const auto& r : runs) {
    out << r.penalty << ',' << r.variant << ',' << r.repeat << ',' << r.seed << ',' << r.lambda << ',' << r.theta
        << ',' << r.upsilon << ',' << to_string(r.metric) << ',' << r.value << ',' << r.support << ',' << r.rank
        << ',' << r.iterations << ',' << r.seconds << ',' << (r.converged ? 1 : 0) << '\n';
  }
}

std::vector<RunRecord> read_runs_csv(std::istream& in) {
  std::size_t lineno = 0;
  const auto rows = read_csv_rows(in, kRunsHeader, lineno);
  std::vector<RunRecord> out;
  std::size_t ln = 1;
  for (const auto& row : rows) {
    ++ln;
    const auto f = split_on(row, ",");
    if (f.size() != 14) throw ParseError("line " + std::to_string(ln) + ": expected 14 fields", ln);
    RunRecord r;
    r.penalty = f[0];
    r.variant = f[1];
    r.repeat = field<int>(f, 2, ln);
    r.seed = field<std::uint64_t>(f, 3, ln);
    r.lambda = field<double>(f, 4, ln);
    r.theta = field<double>(f, 5, ln);
    r.upsilon = field<double>(f, 6, ln);
    r.metric = parse_metric_kind(f[7]);
    r.value = field<double>(f, 8, ln);
    r.support = field<double>(f, 9, ln);
    r.rank = field<Index>(f, 10, ln);
    r.iterations = field<int>(f, 11, ln);
    r.seconds = field<double>(f, 12, ln);
    r.converged = field<int>(f, 13, ln) != 0;
    out.push_back(r);
  }
  return out;
}

void write_summary_csv(std::ostream& out, const SummaryRow& s) {
  out << kSummaryHeader << '\n' << std::setprecision(17);
  out << s.penalty << ',' << s.variant << ',' << to_string(s.metric) << ',' << s.runs << ',' << s.mean << ','
      << s.stddev << ',' << s.support_mean << ',' << s.rank_mean << ',' << s.rank_min << ',' << s.rank_max << ','
      << s.seconds_mean << ',' << s.seconds_std << ',' << s.iterations_mean << '\n';
}

SummaryRow read_summary_csv(std::istream& in) {
  std::size_t lineno = 0;
  const auto rows = read_csv_rows(in, kSummaryHeader, lineno);
  if (rows.size() != 1) throw ParseError("summary must hold exactly one row", 2);
  const auto f = split_on(rows[0], ",");
  if (f.size() != 13) throw ParseError("line 2: expected 13 fields", 2);
  SummaryRow s;
  s.penalty = f[0];
  s.variant = f[1];
  s.metric = parse_metric_kind(f[2]);
  s.runs = field<int>(f, 3, 2);
  s.mean = field<double>(f, 4, 2);
  s.stddev = field<double>(f, 5, 2);
  s.support_mean = field<double>(f, 6, 2);
  s.rank_mean = field<double>(f, 7, 2);
  s.rank_min = field<Index>(f, 8, 2);
  s.rank_max = field<Index>(f, 9, 2);
  s.seconds_mean = field<double>(f, 10, 2);
  s.seconds_std = field<double>(f, 11, 2);
  s.iterations_mean = field<double>(f, 12, 2);
  return s;
}

void write_iters_jsonl(std::ostream& out, const std::vector<IterationStats>& stats, int run) {
  for (const auto& s : stats) {
    nlohmann::json j{{"run", run},
                     {"t", s.t},
                     {"objective", s.objective},
                     {"objective_before", s.objective_before},
                     {"lambda_t", s.lambda_t},
                     {"rank", s.rank},
                     {"k", s.k},
                     {"dist_sq", s.dist_sq},
                     {"coef", s.coef},
                     {"margin", s.margin},
                     {"branch", std::string(to_string(s.branch))},
                     {"inner_iters", s.inner_iters},
                     {"near_fixed_point", s.near_fixed_point},
                     {"wall_ms", s.wall_ms}};
    out << j.dump() << '\n';
  }
}

std::map<int, std::vector<IterationStats>> read_iters_jsonl(std::istream& in) {
  std::map<int, std::vector<IterationStats>> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      IterationStats s;
      s.t = j.at("t").get<int>();
      s.objective = j.at("objective").get<double>();
      s.objective_before = j.at("objective_before").get<double>();
      s.lambda_t = j.at("lambda_t").get<double>();
      s.rank = j.at("rank").get<Index>();
      s.k = j.at("k").get<Index>();
      s.dist_sq = j.at("dist_sq").get<double>();
      s.coef = j.at("coef").get<double>();
      s.margin = j.at("margin").get<double>();
      s.branch = parse_branch(j.at("branch").get<std::string>());
      s.inner_iters = j.at("inner_iters").get<int>();
      s.near_fixed_point = j.at("near_fixed_point").get<bool>();
      s.wall_ms = j.at("wall_ms").get<double>();
      out[j.at("run").get<int>()].push_back(s);
    } catch (const std::exception& e) {
      throw ParseError("line " + std::to_string(lineno) + ": " + e.what(), lineno);
    }
  }
  return out;
}

void write_results(const std::filesystem::path& dir, const ExperimentResult& result) {
  std::filesystem::create_directories(dir);
  std::ofstream runs(dir / "runs.csv");
  write_runs_csv(runs, result.runs);
  std::ofstream summary(dir / "summary.csv");
  write_summary_csv(summary, result.summary);
  std::ofstream iters(dir / "iters.jsonl");
  for (std::size_t i = 0; i < result.logs.size(); ++i) write_iters_jsonl(iters, result.logs[i], static_cast<int>(i));
  if (!runs || !summary || !iters) throw std::runtime_error("failed writing results to " + dir.string());
}

}  // namespace fancl
