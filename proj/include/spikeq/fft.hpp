#pragma once

#include <complex>
#include <numbers>
#include <stdexcept>
#include <unordered_map>
#include <utility>
#include <vector>

// Complex FFT for arbitrary lengths: iterative radix-2 for powers of two,
// Bluestein's chirp-z for everything else. Double precision throughout;
// plans (twiddles, chirp kernels) are cached per length.

namespace spikeq::fft {

using cvec = std::vector<std::complex<double>>;

inline bool is_pow2(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

inline std::size_t next_pow2(std::size_t n) {
    std::size_t p = 1;
    while (p < n) p <<= 1;
    return p;
}

namespace detail {

inline const cvec& twiddles(std::size_t n) {
    static thread_local std::unordered_map<std::size_t, cvec> cache;
    auto it = cache.find(n);
    if (it != cache.end()) return it->second;
    cvec tw(n / 2);
    for (std::size_t k = 0; k < n / 2; ++k)
        tw[k] = std::polar(1.0, -2.0 * std::numbers::pi * double(k) / double(n));
    return cache.emplace(n, std::move(tw)).first->second;
}

inline void fft_pow2(cvec& x, bool inverse) {
    const std::size_t n = x.size();
    if (n <= 1) return;
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j |= bit;
        if (i < j) std::swap(x[i], x[j]);
    }
    const cvec& tw = twiddles(n);
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const std::size_t half = len >> 1;
        const std::size_t stride = n / len;
        for (std::size_t i = 0; i < n; i += len) {
            for (std::size_t k = 0; k < half; ++k) {
                std::complex<double> w = tw[k * stride];
                if (inverse) w = std::conj(w);
                const auto u = x[i + k];
                const auto v = x[i + k + half] * w;
                x[i + k] = u + v;
                x[i + k + half] = u - v;
            }
        }
    }
    if (inverse) {
        const double inv = 1.0 / double(n);
        for (auto& v : x) v *= inv;
    }
}

struct BluesteinPlan {
    cvec chirp;    // w[k] = exp(-i*pi*k^2/n), k^2 reduced mod 2n exactly
    cvec kernel;   // FFT of the wrapped conjugate chirp, length m
    std::size_t m = 0;
};

inline const BluesteinPlan& bluestein_plan(std::size_t n) {
    static thread_local std::unordered_map<std::size_t, BluesteinPlan> cache;
    auto it = cache.find(n);
    if (it != cache.end()) return it->second;

    BluesteinPlan plan;
    plan.m = next_pow2(2 * n - 1);
    plan.chirp.resize(n);
    const std::uint64_t two_n = 2 * static_cast<std::uint64_t>(n);
    for (std::size_t k = 0; k < n; ++k) {
        // phase period of exp(-i*pi*k^2/n) is k^2 mod 2n; reduce in integers
        std::uint64_t q = (static_cast<std::uint64_t>(k) * k) % two_n;
        plan.chirp[k] = std::polar(1.0, -std::numbers::pi * double(q) / double(n));
    }
    plan.kernel.assign(plan.m, {0.0, 0.0});
    plan.kernel[0] = std::conj(plan.chirp[0]);
    for (std::size_t k = 1; k < n; ++k) {
        plan.kernel[k] = std::conj(plan.chirp[k]);
        plan.kernel[plan.m - k] = std::conj(plan.chirp[k]);
    }
    fft_pow2(plan.kernel, false);
    return cache.emplace(n, std::move(plan)).first->second;
}

inline void fft_bluestein(cvec& x) {
    const std::size_t n = x.size();
    const BluesteinPlan& plan = bluestein_plan(n);
    cvec a(plan.m, {0.0, 0.0});
    for (std::size_t k = 0; k < n; ++k) a[k] = x[k] * plan.chirp[k];
    fft_pow2(a, false);
    for (std::size_t k = 0; k < plan.m; ++k) a[k] *= plan.kernel[k];
    fft_pow2(a, true);
    for (std::size_t k = 0; k < n; ++k) x[k] = a[k] * plan.chirp[k];
}

}  // namespace detail

inline void fft_inplace(cvec& x) {
    if (x.empty()) throw std::invalid_argument("fft: empty input");
    if (is_pow2(x.size()))
        detail::fft_pow2(x, false);
    else
        detail::fft_bluestein(x);
}

inline void ifft_inplace(cvec& x) {
    if (x.empty()) throw std::invalid_argument("ifft: empty input");
    if (is_pow2(x.size())) {
        detail::fft_pow2(x, true);
        return;
    }
    for (auto& v : x) v = std::conj(v);
    detail::fft_bluestein(x);
    const double inv = 1.0 / double(x.size());
    for (auto& v : x) v = std::conj(v) * inv;
}

inline cvec fft(cvec x) {
    fft_inplace(x);
    return x;
}

inline cvec ifft(cvec x) {
    ifft_inplace(x);
    return x;
}

}  // namespace spikeq::fft
