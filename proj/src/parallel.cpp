#include "mvdd/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <thread>
#include <vector>

namespace mvdd {

namespace {
std::atomic<int> g_threads{1};
}

void set_thread_count(int count) { g_threads.store(std::max(1, count)); }

int thread_count() { return g_threads.load(); }

void parallel_for(int begin, int end, const std::function<void(int)>& fn) {
  const int n = end - begin;
  const int workers = std::min(thread_count(), n);
  if (workers <= 1) {
    for (int i = begin; i < end; ++i) fn(i);
    return;
  }
  std::atomic<int> next{begin};
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&]() {
      for (int i = next.fetch_add(1); i < end; i = next.fetch_add(1)) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace mvdd
