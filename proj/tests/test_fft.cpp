#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <complex>
#include <numbers>
#include <random>
#include <vector>

#include "spikeq/fft.hpp"

using spikeq::fft::cvec;

namespace {

// quadratic-time reference transform
cvec naive_dft(const cvec& x) {
    const std::size_t n = x.size();
    cvec out(n);
    for (std::size_t k = 0; k < n; ++k) {
        std::complex<double> acc{0.0, 0.0};
        for (std::size_t t = 0; t < n; ++t) {
            const double ang = -2.0 * std::numbers::pi * double(k) * double(t) / double(n);
            acc += x[t] * std::complex<double>(std::cos(ang), std::sin(ang));
        }
        out[k] = acc;
    }
    return out;
}

cvec random_signal(std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> d(0.0, 1.0);
    cvec x(n);
    for (auto& v : x) v = {d(rng), d(rng)};
    return x;
}

}  // namespace

TEST_CASE("fft matches the direct transform on mixed sizes") {
    for (std::size_t n : {1u, 2u, 3u, 4u, 5u, 8u, 12u, 16u, 37u, 64u, 100u, 257u}) {
        const cvec x = random_signal(n, 100 + n);
        const cvec got = spikeq::fft::fft(x);
        const cvec want = naive_dft(x);
        REQUIRE(got.size() == n);
        double worst = 0.0;
        for (std::size_t k = 0; k < n; ++k) worst = std::max(worst, std::abs(got[k] - want[k]));
        INFO("n = " << n);
        CHECK(worst < 1e-9 * double(n));
    }
}

TEST_CASE("inverse transform restores the signal") {
    for (std::size_t n : {1u, 2u, 7u, 16u, 100u, 257u}) {
        const cvec x = random_signal(n, 900 + n);
        const cvec back = spikeq::fft::ifft(spikeq::fft::fft(x));
        double worst = 0.0;
        for (std::size_t k = 0; k < n; ++k) worst = std::max(worst, std::abs(back[k] - x[k]));
        INFO("n = " << n);
        CHECK(worst < 1e-11);
    }
}

TEST_CASE("transform is unitary up to the length factor") {
    // Parseval: sum |X|^2 == n * sum |x|^2
    for (std::size_t n : {8u, 37u, 100u}) {
        const cvec x = random_signal(n, 4000 + n);
        const cvec X = spikeq::fft::fft(x);
        double ex = 0.0, eX = 0.0;
        for (const auto& v : x) ex += std::norm(v);
        for (const auto& v : X) eX += std::norm(v);
        CHECK(eX == Catch::Approx(double(n) * ex).epsilon(1e-12));
    }
}

TEST_CASE("delta transforms to the flat spectrum") {
    cvec x(16, {0.0, 0.0});
    x[0] = {1.0, 0.0};
    const cvec X = spikeq::fft::fft(x);
    for (const auto& v : X) {
        CHECK(v.real() == Catch::Approx(1.0).margin(1e-12));
        CHECK(std::abs(v.imag()) < 1e-12);
    }
}

TEST_CASE("empty input is rejected") {
    cvec x;
    CHECK_THROWS_AS(spikeq::fft::fft(x), std::invalid_argument);
}
