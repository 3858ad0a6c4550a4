#pragma once

#include <atomic>
#include <charconv>
#include <chrono>
#include <cstdio>
#include <functional>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace diffshield {

struct StopWatch {
    std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
};

// Runs fn(i) for i in [0, n). Output must depend only on i (each task writes
// its own slot), so the schedule cannot change results.
inline void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn) {
    if (workers <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    std::atomic<bool> failed{false};
    std::string error;
    std::mutex mtx;
    auto work = [&]() {
        for (;;) {
            std::size_t i = next.fetch_add(1);
            if (i >= n || failed.load()) break;
            try {
                fn(i);
            } catch (const std::exception& e) {
                std::lock_guard<std::mutex> lk(mtx);
                if (!failed.exchange(true)) error = e.what();
            }
        }
    };
    int nw = std::min<int>(workers, static_cast<int>(n));
    pool.reserve(static_cast<std::size_t>(nw));
    for (int w = 0; w < nw; ++w) pool.emplace_back(work);
    for (auto& th : pool) th.join();
    if (failed.load()) throw std::runtime_error("parallel task failed: " + error);
}

// Shortest round-trip decimal form; used everywhere reports must be
// byte-stable across runs.
inline std::string format_double(double x) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, x);
    return std::string(buf, res.ptr);
}

}  // namespace diffshield
