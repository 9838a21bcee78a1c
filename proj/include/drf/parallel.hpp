#pragma once

#include <cstddef>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace drf {

enum class ExecPolicy { Serial, OpenMP };

// Block size used for gradient accumulation. Fixed (never derived from the
// thread count) so per-block partial sums can be reduced in block order and
// give bit-identical results for any thread count, including the serial path.
inline constexpr std::size_t kGradBlock = 16;

// Runs f(i) for i in [0, n). Each call must touch only its own output slot.
template <class F>
void parallel_for(std::size_t n, ExecPolicy policy, F&& f) {
#ifdef _OPENMP
    if (policy == ExecPolicy::OpenMP) {
        const long ln = static_cast<long>(n);
#pragma omp parallel for schedule(dynamic)
        for (long i = 0; i < ln; ++i) f(static_cast<std::size_t>(i));
        return;
    }
#else
    (void)policy;
#endif
    for (std::size_t i = 0; i < n; ++i) f(i);
}

// Runs f(block_index, begin, end) over ceil(n/block) fixed-size blocks.
template <class F>
void for_blocks(std::size_t n, std::size_t block, ExecPolicy policy, F&& f) {
    const std::size_t nblocks = block ? (n + block - 1) / block : 0;
    parallel_for(nblocks, policy, [&](std::size_t b) {
        const std::size_t begin = b * block;
        const std::size_t end = begin + block < n ? begin + block : n;
        f(b, begin, end);
    });
}

}  // namespace drf
