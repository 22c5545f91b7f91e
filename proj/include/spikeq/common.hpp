#pragma once

#include <array>
#include <cstdint>
#include <cstdlib>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace spikeq {

// Dense row-major matrix of doubles. Heavy lifting in this project is
// small matrix-vector work, so no BLAS behind it.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> a;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), a(r * c, 0.0) {}

    double& operator()(std::size_t r, std::size_t c) { return a[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return a[r * cols + c]; }
    double* row(std::size_t r) { return a.data() + r * cols; }
    const double* row(std::size_t r) const { return a.data() + r * cols; }
    std::size_t size() const { return a.size(); }

    void fill(double v) { std::fill(a.begin(), a.end(), v); }
    bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
};

struct BitPair {
    std::uint8_t b1 = 0;
    std::uint8_t b2 = 0;
    bool operator==(const BitPair&) const = default;
};

// PAM4 Gray labeling. Class index k orders the constellation by amplitude:
//   k=0: 00 -> -3,  k=1: 01 -> -1,  k=2: 11 -> +1,  k=3: 10 -> +3
inline constexpr std::array<double, 4> kPam4Levels{-3.0, -1.0, 1.0, 3.0};

inline constexpr BitPair bits_for_class(int k) {
    constexpr std::array<BitPair, 4> map{BitPair{0, 0}, BitPair{0, 1}, BitPair{1, 1}, BitPair{1, 0}};
    return map[static_cast<std::size_t>(k)];
}

inline constexpr int class_for_bits(BitPair b) {
    if (b.b1 == 0) return b.b2 == 0 ? 0 : 1;
    return b.b2 == 1 ? 2 : 3;
}

inline constexpr double amplitude_for_class(int k) { return kPam4Levels[static_cast<std::size_t>(k)]; }

inline int hamming2(BitPair x, BitPair y) {
    return int(x.b1 != y.b1) + int(x.b2 != y.b2);
}

// Deterministic seed derivation for independent RNG streams.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream, std::uint64_t index = 0) {
    return splitmix64(splitmix64(master ^ (0xa076'1d64'78bd'642fULL * (stream + 1))) + index);
}

// Worker count: SPIKEQ_WORKERS overrides hardware concurrency.
inline unsigned default_workers() {
    if (const char* env = std::getenv("SPIKEQ_WORKERS")) {
        long v = std::strtol(env, nullptr, 10);
        if (v >= 1 && v <= 4096) return static_cast<unsigned>(v);
    }
    unsigned hc = std::thread::hardware_concurrency();
    return hc == 0 ? 1u : hc;
}

// Runs fn(i) for i in [0, n). Each item must write only its own output slot;
// results are then independent of the worker count.
template <typename Fn>
void parallel_for(std::size_t n, unsigned workers, Fn&& fn) {
    if (n == 0) return;
    if (workers <= 1 || n == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    workers = static_cast<unsigned>(std::min<std::size_t>(workers, n));
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (unsigned w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            // fixed block partition: item->worker mapping affects only scheduling
            std::size_t lo = n * w / workers;
            std::size_t hi = n * (w + 1) / workers;
            for (std::size_t i = lo; i < hi; ++i) fn(i);
        });
    }
    for (auto& t : pool) t.join();
}

inline double mean(std::span<const double> xs) {
    if (xs.empty()) return 0.0;
    double s = 0.0;
    for (double x : xs) s += x;
    return s / static_cast<double>(xs.size());
}

inline double variance(std::span<const double> xs) {
    if (xs.size() < 2) return 0.0;
    double m = mean(xs);
    double s = 0.0;
    for (double x : xs) s += (x - m) * (x - m);
    return s / static_cast<double>(xs.size());
}

}  // namespace spikeq
