#include "fancl/parallel.hpp"

#include <algorithm>
#include <numeric>
#include <random>

namespace fancl {

namespace {

std::vector<Index> even_cuts(Index count, int q) {
  std::vector<Index> cuts(static_cast<std::size_t>(q) + 1);
  for (int b = 0; b <= q; ++b) cuts[b] = count * b / q;
  return cuts;
}

}  // namespace

std::span<const Index> BlockPartition::row_slab(int b) const {
  return std::span<const Index>(row_perm).subspan(row_cuts[b], row_cuts[b + 1] - row_cuts[b]);
}

std::span<const Index> BlockPartition::col_slab(int b) const {
  return std::span<const Index>(col_perm).subspan(col_cuts[b], col_cuts[b + 1] - col_cuts[b]);
}

std::vector<Index> BlockPartition::block_counts(const ObservationPattern& pattern) const {
  if (pattern.m != m || pattern.n != n) throw ShapeError("block_counts: pattern shape differs");
  std::vector<int> row_block(static_cast<std::size_t>(m));
  std::vector<int> col_block(static_cast<std::size_t>(n));
  for (int b = 0; b < q; ++b) {
    for (Index i : row_slab(b)) row_block[i] = b;
    for (Index j : col_slab(b)) col_block[j] = b;
  }
  std::vector<Index> counts(static_cast<std::size_t>(q) * q, 0);
  for (Index i = 0; i < m; ++i) {
    for (Index k = pattern.row_ptr[i]; k < pattern.row_ptr[i + 1]; ++k) {
      ++counts[static_cast<std::size_t>(row_block[i]) * q + col_block[pattern.col_idx[k]]];
    }
  }
  return counts;
}

BlockPartition make_partition(Index m, Index n, int q, std::uint64_t seed) {
  if (q < 1 || q > std::min(m, n)) throw ParameterError("thread count must lie in [1, min(m, n)]");
  BlockPartition p;
  p.m = m;
  p.n = n;
  p.q = q;
  p.row_perm.resize(static_cast<std::size_t>(m));
  p.col_perm.resize(static_cast<std::size_t>(n));
  std::iota(p.row_perm.begin(), p.row_perm.end(), Index{0});
  std::iota(p.col_perm.begin(), p.col_perm.end(), Index{0});
  if (q > 1) {
    std::mt19937_64 rng(seed);
    std::shuffle(p.row_perm.begin(), p.row_perm.end(), rng);
    std::shuffle(p.col_perm.begin(), p.col_perm.end(), rng);
  }
  p.row_cuts = even_cuts(m, q);
  p.col_cuts = even_cuts(n, q);
  return p;
}

double load_ratio(const BlockPartition& part, const ObservationPattern& pattern) {
  const auto counts = part.block_counts(pattern);
  const double total = std::accumulate(counts.begin(), counts.end(), 0.0);
  if (total == 0.0) return 1.0;
  const double mean = total / static_cast<double>(counts.size());
  return static_cast<double>(*std::max_element(counts.begin(), counts.end())) / mean;
}

WorkerPool::WorkerPool(int q) : q_(q), errors_(static_cast<std::size_t>(q)) {
  if (q < 1) throw ParameterError("worker pool needs at least one thread");
  for (int i = 1; i < q; ++i) threads_.emplace_back([this, i] { worker(i); });
}

WorkerPool::~WorkerPool() {
  {
    std::lock_guard<std::mutex> lock(mu_);
    stop_ = true;
  }
  start_cv_.notify_all();
  for (auto& t : threads_) t.join();
}

void WorkerPool::worker(int id) {
  std::uint64_t seen = 0;
  std::unique_lock<std::mutex> lock(mu_);
  for (;;) {
    start_cv_.wait(lock, [&] { return stop_ || generation_ != seen; });
    if (stop_) return;
    seen = generation_;
    const auto* task = task_;
    lock.unlock();
    try {
      (*task)(id);
    } catch (...) {
      errors_[id] = std::current_exception();
    }
    lock.lock();
    if (--pending_ == 0) done_cv_.notify_one();
  }
}

void WorkerPool::run(const std::function<void(int)>& fn) {
  if (q_ == 1) {
    fn(0);
    return;
  }
  {
    std::lock_guard<std::mutex> lock(mu_);
    task_ = &fn;
    pending_ = q_ - 1;
    std::fill(errors_.begin(), errors_.end(), nullptr);
    ++generation_;
  }
  start_cv_.notify_all();
  try {
    fn(0);
  } catch (...) {
    errors_[0] = std::current_exception();
  }
  {
    std::unique_lock<std::mutex> lock(mu_);
    done_cv_.wait(lock, [&] { return pending_ == 0; });
  }
  for (const auto& e : errors_) {
    if (e) std::rethrow_exception(e);
  }
}

ParallelEngine::ParallelEngine(BlockPartition part) : part_(std::move(part)), pool_(part_.q) {}

void ParallelEngine::for_ranges(Index count, const RangeFn& fn) const {
  const int q = part_.q;
  pool_.run([&](int b) { fn(b, count * b / q, count * (b + 1) / q); });
}

void ParallelEngine::for_slabs(Axis axis, Index count, const SlabFn& fn) const {
  const int q = part_.q;
  const bool rows = axis == Axis::Rows;
  if (count == (rows ? part_.m : part_.n)) {
    pool_.run([&](int b) { fn(b, rows ? part_.row_slab(b) : part_.col_slab(b)); });
    return;
  }
  pool_.run([&](int b) {
    std::vector<Index> idx(static_cast<std::size_t>(count * (b + 1) / q - count * b / q));
    std::iota(idx.begin(), idx.end(), count * b / q);
    fn(b, idx);
  });
}

Matrix pl_apply(const ParallelEngine& engine, const SlrOperator& op, const Matrix& w, Direction direction) {
  return direction == Direction::Right ? slr_right_mul(op, w, engine) : slr_left_mul(op, w, engine);
}

double pl_residual_sq(const ParallelEngine& engine, const SparseObserved& a, const SparseObserved& b) {
  return observed_residual_sq(a, b.values, engine);
}

Matrix inde_span_pl(const ParallelEngine& engine, const Matrix& b) { return inde_span(b, engine); }

GsvtResult approx_gsvt_pl(const ParallelEngine& engine, const SlrOperator& z, const Matrix& r, double mu,
                          const PenaltySpec& spec, int power_iters) {
  return approx_gsvt(z, r, ProxParams{spec, mu, 1.0}, power_iters, engine);
}

SolveResult fancl_pl(const CompletionProblem& problem, const SolverConfig& cfg, int q, Variant variant) {
  const ParallelEngine engine(make_partition(problem.rows(), problem.cols(), q, cfg.seed));
  return solve(problem, cfg, variant, engine);
}

}  // namespace fancl
