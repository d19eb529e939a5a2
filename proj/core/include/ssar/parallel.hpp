#pragma once

#include <cstddef>
#include <functional>

namespace ssar {

/// Number of worker threads used by the compute kernels. 1 means strictly
/// sequential execution. Initialized from SSAR_THREADS when set.
std::size_t num_threads();
void set_num_threads(std::size_t n);

/// Runs fn(i) for i in [begin, end). Each index is handled by exactly one
/// thread, so kernels that write disjoint outputs per index produce the same
/// bits regardless of the thread count.
void parallel_for(std::size_t begin, std::size_t end,
                  const std::function<void(std::size_t)>& fn);

}  // namespace ssar
