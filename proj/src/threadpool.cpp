#include "shapectl/threadpool.hpp"

#include <algorithm>
#include <atomic>

namespace shapectl {

namespace {
thread_local bool t_inside_worker = false;
}

struct ParallelCall {
  const std::function<void(std::size_t, std::size_t)>* fn = nullptr;
  std::atomic<std::size_t> remaining{0};
  std::mutex mu;
  std::condition_variable done;
};

ThreadPool& ThreadPool::instance() {
  static ThreadPool pool(env_thread_count());
  return pool;
}

ThreadPool::ThreadPool(int n_workers) {
  int extra = std::max(0, n_workers - 1);
  threads_.reserve(extra);
  for (int i = 0; i < extra; ++i)
    threads_.emplace_back([this] { worker_loop(); });
}

ThreadPool::~ThreadPool() {
  {
    std::lock_guard<std::mutex> lk(mu_);
    stop_ = true;
  }
  cv_work_.notify_all();
  for (auto& t : threads_) t.join();
}

void ThreadPool::worker_loop() {
  t_inside_worker = true;
  for (;;) {
    Task task;
    {
      std::unique_lock<std::mutex> lk(mu_);
      cv_work_.wait(lk, [this] { return stop_ || !queue_.empty(); });
      if (stop_ && queue_.empty()) return;
      task = queue_.back();
      queue_.pop_back();
    }
    auto* call = static_cast<ParallelCall*>(task.ctx);
    (*call->fn)(task.begin, task.end);
    if (call->remaining.fetch_sub(1) == 1) {
      std::lock_guard<std::mutex> lk(call->mu);
      call->done.notify_all();
    }
  }
}

void ThreadPool::parallel_for(
    std::size_t n, std::size_t grain,
    const std::function<void(std::size_t, std::size_t)>& fn) {
  if (n == 0) return;
  int nw = workers();
  // nested calls from a worker run inline; partitioning stays deterministic
  if (nw <= 1 || n <= grain || t_inside_worker) {
    fn(0, n);
    return;
  }
  std::size_t chunks = std::min<std::size_t>(nw, (n + grain - 1) / grain);
  std::size_t step = (n + chunks - 1) / chunks;

  ParallelCall call;
  call.fn = &fn;
  std::vector<Task> tasks;
  for (std::size_t c = 1; c < chunks; ++c) {
    Task t;
    t.ctx = &call;
    t.begin = c * step;
    t.end = std::min(n, (c + 1) * step);
    if (t.begin >= t.end) continue;
    tasks.push_back(t);
  }
  call.remaining.store(tasks.size());
  if (!tasks.empty()) {
    {
      std::lock_guard<std::mutex> lk(mu_);
      for (auto& t : tasks) queue_.push_back(t);
    }
    cv_work_.notify_all();
  }
  fn(0, std::min(n, step));
  if (!tasks.empty()) {
    std::unique_lock<std::mutex> lk(call.mu);
    call.done.wait(lk, [&call] { return call.remaining.load() == 0; });
  }
}

}  // namespace shapectl
