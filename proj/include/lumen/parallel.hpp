#pragma once

#include <cstddef>
#include <functional>

namespace lumen {

/// Worker count for kernels: LUMEN_THREADS if set, else hardware concurrency.
/// Always 1 in deterministic mode.
int thread_count();

/// Deterministic mode forces sequential execution everywhere.
void set_deterministic(bool on);
bool deterministic();

/// Splits [0, n) into contiguous chunks and runs fn(begin, end) on each.
/// Chunks never overlap, so kernels that write disjoint outputs per index
/// give identical results regardless of the worker count.
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn,
                  std::size_t min_chunk = 1);

}  // namespace lumen
