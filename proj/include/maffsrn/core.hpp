#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace maffsrn {

// Error taxonomy. The CLI maps these onto exit codes: config/usage -> 1,
// shape/io/data -> 2, numeric -> 3.
struct error : std::runtime_error {
    explicit error(const std::string& msg) : std::runtime_error(msg) {}
};
struct shape_error : error {
    explicit shape_error(const std::string& msg) : error(msg) {}
};
struct config_error : error {
    explicit config_error(const std::string& msg) : error(msg) {}
};
struct numeric_error : error {
    explicit numeric_error(const std::string& msg) : error(msg) {}
};
struct io_error : error {
    explicit io_error(const std::string& msg) : error(msg) {}
};

// NCHW extents. W is the fastest-varying axis of the flat buffer.
struct Shape4 {
    int64_t n = 0, c = 0, h = 0, w = 0;

    int64_t numel() const { return n * c * h * w; }
    bool operator==(const Shape4& o) const {
        return n == o.n && c == o.c && h == o.h && w == o.w;
    }
    bool operator!=(const Shape4& o) const { return !(*this == o); }

    std::string str() const {
        return "(" + std::to_string(n) + "," + std::to_string(c) + "," +
               std::to_string(h) + "," + std::to_string(w) + ")";
    }
};

inline int64_t flat_index(const Shape4& s, int64_t n, int64_t c, int64_t h, int64_t w) {
    return ((n * s.c + c) * s.h + h) * s.w + w;
}

// Running total of live tensor payload bytes. Used by the activation-memory
// tests to compare an instrumented forward pass against the static simulator.
class MemoryMeter {
public:
    static MemoryMeter& instance() {
        static MemoryMeter m;
        return m;
    }
    void on_alloc(int64_t bytes) {
        int64_t live = live_.fetch_add(bytes, std::memory_order_relaxed) + bytes;
        int64_t peak = peak_.load(std::memory_order_relaxed);
        while (live > peak && !peak_.compare_exchange_weak(peak, live, std::memory_order_relaxed)) {
        }
    }
    void on_free(int64_t bytes) { live_.fetch_sub(bytes, std::memory_order_relaxed); }
    int64_t live_bytes() const { return live_.load(std::memory_order_relaxed); }
    int64_t peak_bytes() const { return peak_.load(std::memory_order_relaxed); }
    void reset_peak() { peak_.store(live_bytes(), std::memory_order_relaxed); }

private:
    std::atomic<int64_t> live_{0};
    std::atomic<int64_t> peak_{0};
};

// Intra-op worker count: min(hardware_concurrency, MAFFSRN_THREADS).
inline int max_threads() {
    static int cached = [] {
        int hw = static_cast<int>(std::thread::hardware_concurrency());
        if (hw < 1) hw = 1;
        if (const char* env = std::getenv("MAFFSRN_THREADS")) {
            int cap = std::atoi(env);
            if (cap >= 1 && cap < hw) hw = cap;
        }
        return hw;
    }();
    return cached;
}

// Runs fn(i) for i in [0, count). Each index is handled by exactly one
// worker, so results are identical for any thread count as long as fn
// keeps a fixed accumulation order per index.
template <typename Fn>
void parallel_for(int64_t count, const Fn& fn, int64_t grain = 4096) {
    int nt = max_threads();
    if (nt <= 1 || count < 2 * grain) {
        for (int64_t i = 0; i < count; ++i) fn(i);
        return;
    }
    int workers = static_cast<int>(std::min<int64_t>(nt, (count + grain - 1) / grain));
    std::vector<std::thread> pool;
    pool.reserve(workers);
    int64_t chunk = (count + workers - 1) / workers;
    for (int t = 0; t < workers; ++t) {
        int64_t lo = t * chunk;
        int64_t hi = std::min(count, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([lo, hi, &fn] {
            for (int64_t i = lo; i < hi; ++i) fn(i);
        });
    }
    for (auto& th : pool) th.join();
}

// Seeded uniform stream decoupled from the standard library's distribution
// internals so that identical seeds give identical values everywhere.
class Rng {
public:
    explicit Rng(uint64_t seed) : gen_(static_cast<std::mt19937::result_type>(seed)) {}

    uint32_t next_u32() { return gen_(); }

    // [0, 1)
    double next_uniform() { return std::ldexp(static_cast<double>(gen_()), -32); }

    // [-1, 1)
    double next_symmetric() { return 2.0 * next_uniform() - 1.0; }

    // [0, n)
    int64_t next_index(int64_t n) {
        return static_cast<int64_t>(next_uniform() * static_cast<double>(n)) % n;
    }

private:
    std::mt19937 gen_;
};

}  // namespace maffsrn
