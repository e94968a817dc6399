#pragma once

#include <cstddef>
#include <functional>

namespace enlfcn {

/// Worker count for op-internal loops. Defaults to ENLFCN_THREADS, else 1.
std::size_t thread_count() noexcept;
void set_thread_count(std::size_t n) noexcept;

/// Runs body(i) for i in [begin, end). Each index is handled by exactly one
/// worker, so results are identical for any thread count as long as bodies
/// write disjoint outputs.
void parallel_for(std::size_t begin, std::size_t end, const std::function<void(std::size_t)>& body);

}  // namespace enlfcn
