#pragma once

#include <cstddef>
#include <functional>

namespace tripse {

/// Thread cap for kernels, read once from TRIPSE_THREADS (default 1).
std::size_t kernel_threads();

/// Runs fn(i) for i in [0, n). Work items must write disjoint outputs so the
/// result does not depend on the thread count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace tripse
