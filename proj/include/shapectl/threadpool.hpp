#pragma once

// Static-partition parallel_for over a shared worker pool. Work items are
// assigned by contiguous index range, so results are independent of the
// worker count as long as each element is written by exactly one range.
// Nested calls from inside a worker run inline. SHAPECTL_THREADS pins the
// pool size (default: hardware concurrency).

#include <condition_variable>
#include <cstdlib>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace shapectl {

class ThreadPool {
 public:
  static ThreadPool& instance();

  // Runs fn(begin, end) on disjoint subranges covering [0, n).
  // Falls back to inline execution for small n or a single worker.
  void parallel_for(std::size_t n, std::size_t grain,
                    const std::function<void(std::size_t, std::size_t)>& fn);

  int workers() const { return static_cast<int>(threads_.size()) + 1; }

  ~ThreadPool();

 private:
  explicit ThreadPool(int n_workers);

  struct Task {
    void* ctx = nullptr;
    std::size_t begin = 0, end = 0;
  };

  void worker_loop();

  std::vector<std::thread> threads_;
  std::mutex mu_;
  std::condition_variable cv_work_;
  std::vector<Task> queue_;
  bool stop_ = false;
};

inline int env_thread_count() {
  if (const char* env = std::getenv("SHAPECTL_THREADS")) {
    int v = std::atoi(env);
    if (v >= 1) return v;
  }
  unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

}  // namespace shapectl
