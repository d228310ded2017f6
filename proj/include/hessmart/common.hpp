#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace hessmart {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
// Atoms are stored one per row; row-major keeps each atom contiguous.
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline int& default_thread_count()
{
    static int count = 1;
    return count;
}

// Splits [0, n) into contiguous chunks, one task per chunk. Each chunk must
// write only to its own slots so the result is independent of the partition.
inline void parallel_for(std::size_t n,
                         const std::function<void(std::size_t, std::size_t)>& chunk,
                         int threads = 0)
{
    if (threads <= 0) threads = default_thread_count();
    if (n == 0) return;
    const std::size_t nt = std::min<std::size_t>(std::max(threads, 1), n);
    if (nt == 1) {
        chunk(0, n);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(nt);
    const std::size_t per = (n + nt - 1) / nt;
    for (std::size_t t = 0; t < nt; ++t) {
        const std::size_t b = t * per;
        const std::size_t e = std::min(n, b + per);
        if (b >= e) break;
        pool.emplace_back([&chunk, b, e] { chunk(b, e); });
    }
    for (auto& th : pool) th.join();
}

// Summation with a deterministic pairwise order; reproducible regardless of
// how the terms were produced.
inline double pairwise_sum(const double* data, std::size_t n)
{
    if (n <= 8) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += data[i];
        return s;
    }
    const std::size_t half = n / 2;
    return pairwise_sum(data, half) + pairwise_sum(data + half, n - half);
}

inline double pairwise_sum(const std::vector<double>& v)
{
    return pairwise_sum(v.data(), v.size());
}

}  // namespace hessmart
