#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "fancl/matcomp.hpp"
#include "fancl/parallel.hpp"
#include "fancl/rpca.hpp"

namespace fancl {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t line) : std::runtime_error(what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

// ---- synthetic data ----

struct SynthMcSpec {
  Index m = 500;
  Index k = 5;
  double noise_sigma = 0.1;
  double train_fraction = 0.5;  // of the sampled entries; the rest is validation
  std::uint64_t seed = 0;

  Index sample_count() const;  // ceil(2 m k ln m)
};

struct SynthMc {
  SparseObserved train;
  SparseObserved validation;
  Matrix u;  // m x k
  Matrix v;  // k x m
};

SynthMc gen_synth_mc(const SynthMcSpec& spec);

struct SynthRpcaSpec {
  Index m = 500;
  Index k = 0;  // 0 means ceil(0.01 m)
  double outlier_fraction = 0.01;
  double noise_sigma = 0.1;
  std::uint64_t seed = 0;

  Index rank() const;
  Index outlier_count() const;  // round(outlier_fraction * m^2)
};

struct SynthRpca {
  Matrix observed;
  Matrix low_rank;  // U V
  Matrix sparse;    // outliers
  std::vector<Index> train_cols;
  std::vector<Index> test_cols;
};

SynthRpca gen_synth_rpca(const SynthRpcaSpec& spec);

// ---- ratings ----

enum class TripletFormat { Auto, Whitespace, Csv, MovielensDat };
TripletFormat parse_triplet_format(std::string_view name);

enum class Split : std::uint8_t { Train, Validation, Test };

// Ids are remapped to 0-based indices in increasing order of the raw id.
struct RatingsDataset {
  std::vector<Triplet> triplets;
  std::vector<std::int64_t> user_ids;  // index -> raw id
  std::vector<std::int64_t> item_ids;
  std::vector<Split> split;            // per triplet, empty until assigned

  Index users() const { return static_cast<Index>(user_ids.size()); }
  Index items() const { return static_cast<Index>(item_ids.size()); }
};

// Lines hold `user item rating [extra...]`; blank lines and `#` comments are
// skipped, as is a non-numeric header on the first line of a csv file.
RatingsDataset parse_triplets(std::istream& in, TripletFormat format = TripletFormat::Auto);
RatingsDataset load_triplets(const std::filesystem::path& path, TripletFormat format = TripletFormat::Auto);

// Random split with the given train and validation fractions; the rest is test.
void assign_splits(RatingsDataset& data, double train, double validation, std::uint64_t seed);
SparseObserved split_matrix(const RatingsDataset& data, Split which);

SparseObserved merge_observed(const SparseObserved& a, const SparseObserved& b);

// ---- metrics ----

enum class MetricKind { NmseMc, NmseRpca, Rmse, Psnr, SupportAcc };
std::string_view to_string(MetricKind k);
MetricKind parse_metric_kind(std::string_view name);

// ||P_unobs(X - U V)||_F / ||P_unobs(U V)||_F where unobs is the complement
// of the union of `observed`.
double nmse_mc(const FactoredMatrix& x, const Matrix& u, const Matrix& v,
               const std::vector<const ObservationPattern*>& observed);
// sqrt(mean over test entries of (X - O)^2).
double rmse(const FactoredMatrix& x, const SparseObserved& test);
// -10 log10(||X - O||_F^2 / (m n)).
double psnr(const Matrix& x, const Matrix& reference);
// ||(X + S - truth) restricted to cols||_F / ||truth restricted to cols||_F.
double nmse_rpca(const Matrix& x_plus_s, const Matrix& truth, const std::vector<Index>& cols);

// ---- experiments ----

enum class ProblemKind { SynthMc, SynthRpca, Ratings };

// Flat `key = value` configuration. Lists are comma separated.
struct ExperimentConfig {
  ProblemKind problem = ProblemKind::SynthMc;
  Index m = 500;
  Index k = 5;
  double noise_sigma = 0.1;
  double outlier_fraction = 0.01;
  std::string data;
  TripletFormat format = TripletFormat::Auto;
  double train_fraction = 0.5;
  double validation_fraction = 0.25;

  PenaltyKind penalty = PenaltyKind::CappedL1;
  std::optional<double> theta;  // fixed; default rule per penalty otherwise
  std::vector<double> theta_grid;
  std::vector<double> lambda_grid;  // absolute values; overrides multipliers
  std::vector<double> lambda_multipliers;
  std::vector<double> upsilon_grid;
  std::vector<double> upsilon_multipliers;
  PenaltyKind sparse_penalty = PenaltyKind::CappedL1;
  double sparse_theta_factor = 10.0;
  bool refit = true;

  Variant variant = Variant::Fancl;
  std::optional<Variant> tune_variant;  // defaults to variant
  int threads = 1;
  std::uint64_t seed = 1;
  int repeats = 5;
  SolverConfig solver;
  bool solver_tau_set = false;
};

ExperimentConfig parse_config(std::istream& in);
ExperimentConfig load_config(const std::filesystem::path& path);
// Apply one `key = value` assignment; throws ConfigError on unknown keys or
// malformed values.
void set_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& value);

std::vector<double> default_lambda_multipliers();
double lambda_heuristic(const SparseObserved& observed);
// theta = 2 lambda (capped-l1), sqrt(lambda) (LSP), 3 (TNN), 3.7 (SCAD),
// 2 (MCP); ignored by the convex penalties.
PenaltySpec default_penalty(PenaltyKind kind, double lambda, std::optional<double> theta = std::nullopt);

struct GridPoint {
  double lambda = 0.0;
  double theta = 0.0;
  double upsilon = 0.0;
  double score = 0.0;
  Index rank = 0;
};

struct TuneResult {
  GridPoint best;
  std::vector<GridPoint> grid;
};

// Fits on train for every grid point and scores validation RMSE.
TuneResult tune_completion(const SparseObserved& train, const SparseObserved& validation, PenaltyKind kind,
                           const std::vector<double>& lambdas, const std::vector<std::optional<double>>& thetas,
                           const SolverConfig& cfg, Variant variant, int threads);

struct RpcaTuneResult {
  GridPoint best;
  std::vector<GridPoint> grid;
  RpcaResult fit;  // fit at the best point
  double fit_seconds = 0.0;
};

// Fits the full matrix for every (lambda, upsilon) and scores NMSE on the
// training columns. Near-ties (within 1%) prefer the larger upsilon.
RpcaTuneResult tune_rpca(const SynthRpca& data, PenaltyKind kind, const std::vector<double>& lambdas,
                         const std::vector<double>& upsilons, const ExperimentConfig& cfg);
double upsilon_heuristic(const Matrix& observed);

struct RunRecord {
  std::string penalty;
  std::string variant;
  int repeat = 0;
  std::uint64_t seed = 0;
  double lambda = 0.0;
  double theta = 0.0;
  double upsilon = 0.0;
  MetricKind metric = MetricKind::NmseMc;
  double value = 0.0;
  double support = -1.0;  // RPCA only
  Index rank = 0;
  int iterations = 0;
  double seconds = 0.0;
  bool converged = false;
};

struct SummaryRow {
  std::string penalty;
  std::string variant;
  MetricKind metric = MetricKind::NmseMc;
  int runs = 0;
  double mean = 0.0;
  double stddev = 0.0;
  double support_mean = -1.0;
  double rank_mean = 0.0;
  Index rank_min = 0;
  Index rank_max = 0;
  double seconds_mean = 0.0;
  double seconds_std = 0.0;
  double iterations_mean = 0.0;
};

struct ExperimentResult {
  std::vector<RunRecord> runs;
  SummaryRow summary;
  std::vector<std::vector<IterationStats>> logs;  // per run, final fit
};

ExperimentResult run_experiment(const ExperimentConfig& cfg);
SummaryRow summarize(const std::vector<RunRecord>& runs);

// runs.csv, summary.csv and iters.jsonl under dir.
void write_results(const std::filesystem::path& dir, const ExperimentResult& result);
void write_runs_csv(std::ostream& out, const std::vector<RunRecord>& runs);
std::vector<RunRecord> read_runs_csv(std::istream& in);
void write_summary_csv(std::ostream& out, const SummaryRow& row);
SummaryRow read_summary_csv(std::istream& in);
// One JSON object per iteration, tagged with the run index.
void write_iters_jsonl(std::ostream& out, const std::vector<IterationStats>& stats, int run = 0);
std::map<int, std::vector<IterationStats>> read_iters_jsonl(std::istream& in);

}  // namespace fancl
