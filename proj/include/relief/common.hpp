#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace relief {

inline constexpr const char* kVersion = "0.1.0";

/// Bad or inconsistent input data (missing file, dimension mismatch, ...).
/// The CLI maps this to exit code 2.
struct input_error : std::runtime_error {
    explicit input_error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Numerical failure (degenerate fit, rank-deficient system, ...).
/// The CLI maps this to exit code 3.
struct numeric_error : std::runtime_error {
    explicit numeric_error(const std::string& msg) : std::runtime_error(msg) {}
};

namespace detail {
inline int& thread_count_ref() {
    static int n = 1;
    return n;
}
}  // namespace detail

/// Global worker count for the tile-parallel loops. OpenCV's own threading
/// stays disabled so results do not depend on its scheduling.
inline void set_thread_count(int n) {
    detail::thread_count_ref() = n < 1 ? 1 : n;
}

inline int thread_count() { return detail::thread_count_ref(); }

/// Runs fn(begin, end) over fixed-size row blocks. The block partition is a
/// function of the range only, never of the worker count, so per-block
/// results (and any per-block reductions combined in block order) are
/// identical for 1..N threads.
inline void parallel_rows(int rows, const std::function<void(int, int)>& fn) {
    const int block = 64;
    const int nblocks = (rows + block - 1) / block;
    const int workers = std::min(thread_count(), nblocks);
    if (workers <= 1) {
        for (int b = 0; b < nblocks; ++b)
            fn(b * block, std::min(rows, (b + 1) * block));
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            for (int b = w; b < nblocks; b += workers)
                fn(b * block, std::min(rows, (b + 1) * block));
        });
    }
    for (auto& t : pool) t.join();
}

/// Deterministic reduction companion to parallel_rows: per-block partials are
/// combined in block order regardless of the worker count.
template <typename Partial>
std::vector<Partial> parallel_row_partials(
    int rows, const std::function<Partial(int, int)>& fn) {
    const int block = 64;
    const int nblocks = (rows + block - 1) / block;
    std::vector<Partial> partials(nblocks);
    parallel_rows(rows, [&](int r0, int r1) {
        partials[r0 / block] = fn(r0, r1);
    });
    return partials;
}

}  // namespace relief
