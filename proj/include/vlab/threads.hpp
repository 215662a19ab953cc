#pragma once

#include <cstddef>
#include <functional>
#include <thread>
#include <vector>

namespace vlab {

inline size_t resolve_workers(int requested) {
    if (requested > 0) return size_t(requested);
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : std::min<unsigned>(hw, 8);
}

// Runs fn(chunk_index) for chunk_index in [0, num_chunks). Chunk boundaries are
// fixed by the caller, so results are identical for any worker count as long as
// each chunk writes only its own slots.
inline void parallel_chunks(size_t num_chunks, size_t workers,
                            const std::function<void(size_t)>& fn) {
    if (workers <= 1 || num_chunks <= 1) {
        for (size_t c = 0; c < num_chunks; ++c) fn(c);
        return;
    }
    workers = std::min(workers, num_chunks);
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            for (size_t c = w; c < num_chunks; c += workers) fn(c);
        });
    }
    for (auto& t : pool) t.join();
}

}  // namespace vlab
