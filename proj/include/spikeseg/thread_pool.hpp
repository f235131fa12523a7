#pragma once

#include <cstdint>
#include <functional>

namespace spikeseg {

// Process-wide worker pool. Work items must write to disjoint outputs;
// cross-item reductions are the caller's job and must run in a fixed order
// so results do not depend on scheduling. Worker count is capped by the
// SPIKESEG_THREADS environment variable (read once at first use).
class ThreadPool {
 public:
  static ThreadPool& instance();

  // Runs fn(i) for i in [0, count). Blocks until all items finished.
  // The calling thread participates.
  void parallel_for(int64_t count, const std::function<void(int64_t)>& fn);

  int worker_count() const { return workers_; }

 private:
  explicit ThreadPool(int workers);
  ~ThreadPool();
  ThreadPool(const ThreadPool&) = delete;

  struct Impl;
  Impl* impl_;
  int workers_;
};

// Convenience wrapper around the global pool.
void parallel_for(int64_t count, const std::function<void(int64_t)>& fn);

}  // namespace spikeseg
