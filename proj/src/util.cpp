#include "excursionlab/util.hpp"

#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>

namespace excursionlab {

unsigned effective_threads() {
  if (const char* env = std::getenv("EXCURSIONLAB_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v >= 1) return static_cast<unsigned>(v);
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : hw;
}

namespace {
// nested parallel_for calls run serially, so work dispatched from inside a
// worker (a bench replicate, say) stays single-threaded end to end
thread_local bool t_in_worker = false;
}  // namespace

void parallel_for(std::size_t n_tasks, const std::function<void(std::size_t)>& fn,
                  unsigned n_threads) {
  if (n_threads == 0) n_threads = effective_threads();
  if (t_in_worker || n_threads <= 1 || n_tasks <= 1) {
    for (std::size_t i = 0; i < n_tasks; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> workers;
  const unsigned count = static_cast<unsigned>(std::min<std::size_t>(n_threads, n_tasks));
  std::exception_ptr first_error;
  std::atomic<bool> failed{false};
  std::mutex err_mutex;
  workers.reserve(count);
  for (unsigned w = 0; w < count; ++w) {
    workers.emplace_back([&] {
      t_in_worker = true;
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= n_tasks || failed.load()) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(err_mutex);
          if (!first_error) first_error = std::current_exception();
          failed.store(true);
          return;
        }
      }
    });
  }
  for (auto& t : workers) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace excursionlab
