#pragma once

#include <functional>

namespace mvdd {

// Global worker count for the parallel loops; 1 disables threading.
void set_thread_count(int count);
int thread_count();

// Runs fn(i) for i in [begin, end). Work items write to disjoint slots, so
// results are identical for any thread count.
void parallel_for(int begin, int end, const std::function<void(int)>& fn);

}  // namespace mvdd
