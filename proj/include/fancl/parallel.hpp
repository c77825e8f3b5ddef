#pragma once

#include <condition_variable>
#include <cstdint>
#include <exception>
#include <functional>
#include <mutex>
#include <span>
#include <thread>
#include <vector>

#include "fancl/matcomp.hpp"

namespace fancl {

// Rows and columns are shuffled (q > 1) and cut into q near-equal slabs,
// giving q x q blocks.
struct BlockPartition {
  Index m = 0;
  Index n = 0;
  int q = 1;
  std::vector<Index> row_perm;  // position -> original row
  std::vector<Index> col_perm;
  std::vector<Index> row_cuts;  // q + 1 positions
  std::vector<Index> col_cuts;

  std::span<const Index> row_slab(int b) const;
  std::span<const Index> col_slab(int b) const;
  // Observed entries per block, row-major q x q.
  std::vector<Index> block_counts(const ObservationPattern& pattern) const;
};

BlockPartition make_partition(Index m, Index n, int q, std::uint64_t seed);

// Largest block entry count over the mean block entry count.
double load_ratio(const BlockPartition& part, const ObservationPattern& pattern);

// Persistent threads running one phase at a time. The calling thread takes
// slab 0; run() returns after every slab finished.
class WorkerPool {
 public:
  explicit WorkerPool(int q);
  ~WorkerPool();
  WorkerPool(const WorkerPool&) = delete;
  WorkerPool& operator=(const WorkerPool&) = delete;

  int size() const { return q_; }
  void run(const std::function<void(int)>& fn);

 private:
  void worker(int id);

  int q_;
  std::vector<std::thread> threads_;
  std::mutex mu_;
  std::condition_variable start_cv_;
  std::condition_variable done_cv_;
  const std::function<void(int)>* task_ = nullptr;
  std::uint64_t generation_ = 0;
  int pending_ = 0;
  bool stop_ = false;
  std::vector<std::exception_ptr> errors_;
};

class ParallelEngine : public Engine {
 public:
  explicit ParallelEngine(BlockPartition part);

  int slabs() const override { return part_.q; }
  void for_ranges(Index count, const RangeFn& fn) const override;
  // Uses the shuffled slabs when count matches the partitioned axis,
  // contiguous ranges otherwise.
  void for_slabs(Axis axis, Index count, const SlabFn& fn) const override;
  const BlockPartition& partition() const { return part_; }

 private:
  BlockPartition part_;
  mutable WorkerPool pool_;
};

enum class Direction { Right, Left };

Matrix pl_apply(const ParallelEngine& engine, const SlrOperator& op, const Matrix& w, Direction direction);
// Sum over observed entries of (a - b)^2.
double pl_residual_sq(const ParallelEngine& engine, const SparseObserved& a, const SparseObserved& b);
Matrix inde_span_pl(const ParallelEngine& engine, const Matrix& b);
GsvtResult approx_gsvt_pl(const ParallelEngine& engine, const SlrOperator& z, const Matrix& r, double mu,
                          const PenaltySpec& spec, int power_iters = 3);

SolveResult fancl_pl(const CompletionProblem& problem, const SolverConfig& cfg, int q,
                     Variant variant = Variant::Fancl);

}  // namespace fancl
