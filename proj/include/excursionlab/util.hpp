#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <thread>
#include <vector>

namespace excursionlab {

// splitmix64 finalizer; used to derive independent per-trajectory /
// per-replicate seed streams from (base, index).
inline std::uint64_t mix_seed(std::uint64_t base, std::uint64_t index) {
  std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Worker count: EXCURSIONLAB_THREADS caps the pool, 0/unset means hardware.
unsigned effective_threads();

// Runs fn(task) for task in [0, n_tasks) on a small worker pool. Tasks must
// not touch shared mutable state except their own output slot.
void parallel_for(std::size_t n_tasks, const std::function<void(std::size_t)>& fn,
                  unsigned n_threads = 0);

}  // namespace excursionlab
