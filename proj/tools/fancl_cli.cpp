#include <chrono>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "fancl/harness.hpp"

using namespace fancl;

namespace {

struct CommonFlags {
  std::string config;
  std::optional<int> threads;
  std::optional<std::uint64_t> seed;
  std::string out = "results";
  std::optional<std::string> variant;
  std::optional<std::string> penalty;
  std::vector<std::string> set;
};

void add_common(CLI::App* app, CommonFlags& f) {
  app->add_option("--config", f.config, "flat key = value experiment config");
  app->add_option("--threads", f.threads, "thread count q")->check(CLI::PositiveNumber);
  app->add_option("--seed", f.seed, "base seed");
  app->add_option("--out", f.out, "output directory");
  app->add_option("--variant", f.variant, "solver variant")->check(CLI::IsMember({"fancl", "fancl-acc"}));
  app->add_option("--penalty", f.penalty, "low-rank penalty")
      ->check(CLI::IsMember({"capped-l1", "lsp", "tnn", "scad", "mcp", "nuclear"}));
  app->add_option("--set", f.set, "extra config assignment key=value (repeatable)");
}

ExperimentConfig build_config(const CommonFlags& f, const std::string& problem) {
  ExperimentConfig cfg = f.config.empty() ? ExperimentConfig{} : load_config(f.config);
  set_config_value(cfg, "problem", problem);
  for (const auto& kv : f.set) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    set_config_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (f.threads) cfg.threads = *f.threads;
  if (f.seed) cfg.seed = *f.seed;
  if (f.variant) set_config_value(cfg, "variant", *f.variant);
  if (f.penalty) set_config_value(cfg, "penalty", *f.penalty);
  return cfg;
}

void print_summary(const ExperimentResult& res) {
  const auto& s = res.summary;
  std::cout << std::setprecision(5);
  for (const auto& r : res.runs) {
    std::cout << "run " << r.repeat << " seed " << r.seed << "  lambda " << r.lambda << "  " << to_string(r.metric)
              << " " << r.value;
    if (r.support >= 0.0) std::cout << "  support " << r.support;
    std::cout << "  rank " << r.rank << "  iters " << r.iterations << "  time " << r.seconds << "s\n";
  }
  std::cout << s.penalty << " / " << s.variant << ": " << to_string(s.metric) << " " << s.mean << " +- " << s.stddev
            << "  rank " << s.rank_min << ".." << s.rank_max << "  time " << s.seconds_mean << " +- " << s.seconds_std
            << "s over " << s.runs << " runs\n";
}

int run_config(const CommonFlags& f, const std::string& problem) {
  const auto cfg = build_config(f, problem);
  const auto res = run_experiment(cfg);
  write_results(f.out, res);
  print_summary(res);
  std::cout << "results written to " << f.out << "\n";
  return 0;
}

Matrix read_matrix(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    for (char& c : line) {
      if (c == ',') c = ' ';
    }
    std::istringstream is(line);
    std::vector<double> row;
    for (double v; is >> v;) row.push_back(v);
    if (!is.eof()) throw ParseError("line " + std::to_string(lineno) + ": not a number", lineno);
    if (row.empty()) continue;
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw ParseError("line " + std::to_string(lineno) + ": ragged row", lineno);
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw ParseError("empty matrix", lineno);
  Matrix out(static_cast<Index>(rows.size()), static_cast<Index>(rows.front().size()));
  for (Index i = 0; i < out.rows(); ++i) {
    for (Index j = 0; j < out.cols(); ++j) out(i, j) = rows[i][j];
  }
  return out;
}

void write_matrix(const std::filesystem::path& path, const Matrix& m) {
  std::ofstream out(path);
  out << std::setprecision(17);
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) out << (j ? " " : "") << m(i, j);
    out << '\n';
  }
}

int run_rpca_file(const CommonFlags& f, const std::string& input, std::optional<double> lambda,
                  std::optional<double> upsilon) {
  ExperimentConfig cfg = build_config(f, "synth-rpca");
  const Matrix o = read_matrix(input);
  const double ups = upsilon.value_or(upsilon_heuristic(o));
  const double lam = lambda.value_or(std::sqrt(static_cast<double>(std::max(o.rows(), o.cols()))) * ups);
  RpcaProblem prob{o, default_penalty(cfg.penalty, lam, cfg.theta), lam,
                   PenaltySpec{cfg.sparse_penalty, cfg.sparse_theta_factor * ups}, ups};
  SolverConfig solver = cfg.solver;
  if (!cfg.solver_tau_set) solver.tau = 2.1;
  solver.seed = cfg.seed;
  const auto t0 = std::chrono::steady_clock::now();
  const auto res = rpca_fit(prob, solver);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::filesystem::create_directories(f.out);
  const Matrix x = res.x.dense();
  write_matrix(std::filesystem::path(f.out) / "low_rank.txt", x);
  write_matrix(std::filesystem::path(f.out) / "sparse.txt", res.s);
  std::ofstream iters(std::filesystem::path(f.out) / "iters.jsonl");
  write_iters_jsonl(iters, res.stats);
  std::cout << std::setprecision(5) << "lambda " << lam << "  upsilon " << ups << "  rank " << res.x.rank()
            << "  nonzeros " << (res.s.array() != 0.0).count() << "  psnr(X, O) " << psnr(x, o) << "  iters "
            << res.stats.size() << "  time " << secs << "s\n";
  return 0;
}

int run_bench(const CommonFlags& f, Index m) {
  ExperimentConfig cfg = build_config(f, "synth-mc");
  SynthMcSpec spec;
  spec.m = m;
  spec.k = cfg.k;
  spec.noise_sigma = cfg.noise_sigma;
  spec.seed = cfg.seed;
  const auto data = gen_synth_mc(spec);
  const auto observed = merge_observed(data.train, data.validation);
  const double lambda = cfg.lambda_grid.empty() ? 200.0 * lambda_heuristic(observed) : cfg.lambda_grid.front();
  const CompletionProblem prob(observed, default_penalty(cfg.penalty, lambda, cfg.theta), lambda);
  SolverConfig solver = cfg.solver;
  solver.seed = cfg.seed;
  std::vector<int> qs{1};
  for (int q = 2; q <= cfg.threads; q *= 2) qs.push_back(q);
  if (qs.back() != cfg.threads) qs.push_back(cfg.threads);
  std::filesystem::create_directories(f.out);
  std::ofstream csv(std::filesystem::path(f.out) / "bench.csv");
  csv << "q,iterations,ms_per_iter,objective,rel_diff,load_ratio\n" << std::setprecision(10);
  double base = 0.0;
  std::cout << std::setprecision(5);
  for (int q : qs) {
    const auto res = fancl_pl(prob, solver, q, cfg.variant);
    double ms = 0.0;
    for (const auto& s : res.stats) ms += s.wall_ms;
    ms /= static_cast<double>(res.stats.size());
    const double obj = res.stats.back().objective;
    if (q == 1) base = obj;
    const double rel = std::abs(obj - base) / std::abs(base);
    const double load = load_ratio(make_partition(m, m, q, solver.seed), *observed.pattern);
    csv << q << ',' << res.stats.size() << ',' << ms << ',' << obj << ',' << rel << ',' << load << '\n';
    std::cout << "q " << q << "  iters " << res.stats.size() << "  ms/iter " << ms << "  objective " << obj
              << "  rel diff " << rel << "  load ratio " << load << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Low-rank matrix learning with nonconvex regularizers"};
  app.require_subcommand(1);
  CommonFlags f;

  auto* smc = app.add_subcommand("synth-mc", "synthetic matrix completion experiment");
  add_common(smc, f);
  auto* srp = app.add_subcommand("synth-rpca", "synthetic robust PCA experiment");
  add_common(srp, f);
  auto* cmp = app.add_subcommand("complete", "matrix completion on a ratings file");
  add_common(cmp, f);
  std::string data, format;
  cmp->add_option("--data", data, "ratings file (user item rating per line)");
  cmp->add_option("--format", format, "auto, whitespace, csv or movielens-dat");

  auto* rp = app.add_subcommand("rpca", "robust PCA on a numeric matrix file");
  add_common(rp, f);
  std::string input;
  std::optional<double> lambda, upsilon;
  rp->add_option("--input", input, "whitespace or comma separated matrix")->required();
  rp->add_option("--lambda", lambda, "low-rank weight");
  rp->add_option("--upsilon", upsilon, "sparse weight");

  auto* bench = app.add_subcommand("bench", "parallel scaling on synthetic completion");
  add_common(bench, f);
  Index bench_m = 2000;
  bench->add_option("--m", bench_m, "matrix size")->check(CLI::PositiveNumber);

  CLI11_PARSE(app, argc, argv);
  try {
    if (*smc) return run_config(f, "synth-mc");
    if (*srp) return run_config(f, "synth-rpca");
    if (*cmp) {
      if (!data.empty()) f.set.push_back("data=" + data);
      if (!format.empty()) f.set.push_back("format=" + format);
      return run_config(f, "ratings");
    }
    if (*rp) return run_rpca_file(f, input, lambda, upsilon);
    if (*bench) return run_bench(f, bench_m);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
