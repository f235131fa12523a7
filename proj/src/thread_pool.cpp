#include "spikeseg/thread_pool.hpp"

#include <atomic>
#include <condition_variable>
#include <cstdlib>
#include <memory>
#include <mutex>
#include <thread>
#include <vector>

namespace spikeseg {

namespace {

struct Job {
  const std::function<void(int64_t)>* fn = nullptr;
  int64_t count = 0;
  std::atomic<int64_t> next{0};
  std::atomic<int64_t> remaining{0};
};

}  // namespace

struct ThreadPool::Impl {
  std::mutex mu;
  std::condition_variable cv_work;
  std::condition_variable cv_done;
  std::shared_ptr<Job> job;  // currently published job (may be finished)
  uint64_t generation = 0;
  bool shutdown = false;
  std::vector<std::thread> threads;

  static void drain(Job& j) {
    for (;;) {
      const int64_t i = j.next.fetch_add(1, std::memory_order_relaxed);
      if (i >= j.count) return;
      (*j.fn)(i);
      j.remaining.fetch_sub(1, std::memory_order_acq_rel);
    }
  }

  void worker_loop() {
    uint64_t seen = 0;
    for (;;) {
      std::shared_ptr<Job> j;
      {
        std::unique_lock<std::mutex> lk(mu);
        cv_work.wait(lk, [&] { return shutdown || generation != seen; });
        if (shutdown) return;
        seen = generation;
        j = job;
      }
      drain(*j);
      if (j->remaining.load(std::memory_order_acquire) == 0) {
        std::lock_guard<std::mutex> lk(mu);
        cv_done.notify_all();
      }
    }
  }
};

static int resolve_worker_count() {
  int hw = static_cast<int>(std::thread::hardware_concurrency());
  if (hw < 1) hw = 1;
  if (const char* env = std::getenv("SPIKESEG_THREADS")) {
    const int cap = std::atoi(env);
    if (cap >= 1 && cap < hw) hw = cap;
  }
  return hw;
}

ThreadPool::ThreadPool(int workers) : impl_(new Impl), workers_(workers) {
  for (int i = 0; i < workers_ - 1; i++)
    impl_->threads.emplace_back([this] { impl_->worker_loop(); });
}

ThreadPool::~ThreadPool() {
  {
    std::lock_guard<std::mutex> lk(impl_->mu);
    impl_->shutdown = true;
  }
  impl_->cv_work.notify_all();
  for (auto& t : impl_->threads) t.join();
  delete impl_;
}

ThreadPool& ThreadPool::instance() {
  static ThreadPool pool(resolve_worker_count());
  return pool;
}

void ThreadPool::parallel_for(int64_t count,
                              const std::function<void(int64_t)>& fn) {
  if (count <= 0) return;
  if (workers_ == 1 || count == 1) {
    for (int64_t i = 0; i < count; i++) fn(i);
    return;
  }
  auto job = std::make_shared<Job>();
  job->fn = &fn;
  job->count = count;
  job->remaining.store(count, std::memory_order_relaxed);
  {
    std::lock_guard<std::mutex> lk(impl_->mu);
    impl_->job = job;
    impl_->generation++;
  }
  impl_->cv_work.notify_all();
  Impl::drain(*job);  // calling thread participates
  std::unique_lock<std::mutex> lk(impl_->mu);
  impl_->cv_done.wait(
      lk, [&] { return job->remaining.load(std::memory_order_acquire) == 0; });
}

void parallel_for(int64_t count, const std::function<void(int64_t)>& fn) {
  ThreadPool::instance().parallel_for(count, fn);
}

}  // namespace spikeseg
