#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <random>
#include <stdexcept>
#include <vector>

#include "spikeq/common.hpp"
#include "spikeq/fft.hpp"

// IM/DD link simulation: PAM4 mapping, RRC pulse shaping, optical bias,
// chromatic dispersion, square-law photodiode, AWGN, matched filtering and
// symbol-rate decimation. All stages are pure functions of their inputs.

namespace spikeq {

struct LinkConfig {
    double baud_rate = 100e9;          // symbols/s
    double wavelength = 1270e-9;       // m
    double dispersion_ps_nm_km = -5.0; // converted to s/m^2 internally
    double fiber_length = 5000.0;      // m
    int oversampling = 2;              // samples per symbol
    double rrc_rolloff = 0.2;
    int rrc_span = 16;                 // symbols per filter
    // Bias sets the modulation depth: the photodiode output is
    // bias^2 + 2*bias*Re(s) + |s|^2, so a bias much larger than the signal
    // swing buries the |s|^2 term and leaves an almost linear channel that a
    // linear equalizer already handles. 1.4 against a +/-1.2 swing keeps the
    // square-law distortion strong enough that nonlinear equalizers matter.
    double amp_scale = 1.0 / 3.0;      // maps {-3..3} into [-1, 1]
    double bias = 1.4;                 // optical bias added before the fiber
    double noise_sigma2 = 0.0;         // AWGN variance after the photodiode
    std::uint64_t rng_seed = 1;
    int guard_symbols = 20;            // simulated and discarded at both ends

    // D [ps/(nm km)] = 1e-12 s / (1e-9 m * 1e3 m) = 1e-6 s/m^2
    double dispersion_si() const { return dispersion_ps_nm_km * 1e-6; }
    double sample_rate() const { return baud_rate * double(oversampling); }

    void validate() const {
        if (baud_rate <= 0) throw std::invalid_argument("LinkConfig: baud_rate must be > 0");
        if (wavelength <= 0) throw std::invalid_argument("LinkConfig: wavelength must be > 0");
        if (fiber_length < 0) throw std::invalid_argument("LinkConfig: fiber_length must be >= 0");
        if (oversampling < 2) throw std::invalid_argument("LinkConfig: oversampling must be >= 2");
        if (rrc_rolloff < 0.0 || rrc_rolloff > 1.0)
            throw std::invalid_argument("LinkConfig: rrc_rolloff must be in [0, 1]");
        if (rrc_span < 2) throw std::invalid_argument("LinkConfig: rrc_span must be >= 2");
        if (noise_sigma2 < 0) throw std::invalid_argument("LinkConfig: noise_sigma2 must be >= 0");
        if (guard_symbols < rrc_span)
            throw std::invalid_argument("LinkConfig: guard_symbols must cover the RRC span");
    }
};

struct SymbolFrame {
    std::vector<BitPair> bits;
    std::vector<double> amplitudes;
    std::size_t size() const { return bits.size(); }
};

struct WaveformBuffer {
    std::vector<std::complex<double>> samples;
    double sample_rate = 0.0;
};

inline SymbolFrame map_pam4(const std::vector<BitPair>& bits) {
    SymbolFrame f;
    f.bits = bits;
    f.amplitudes.reserve(bits.size());
    for (BitPair b : bits) f.amplitudes.push_back(amplitude_for_class(class_for_bits(b)));
    return f;
}

inline std::vector<BitPair> random_bits(std::size_t n, std::mt19937_64& rng) {
    std::vector<BitPair> out(n);
    for (auto& b : out) {
        std::uint64_t r = rng();
        b.b1 = static_cast<std::uint8_t>(r & 1);
        b.b2 = static_cast<std::uint8_t>((r >> 1) & 1);
    }
    return out;
}

// Root-raised-cosine taps on an oversampled grid, normalized to unit energy.
// The removable singularities at t=0 and |t|=T/(4*rolloff) use their limits.
inline std::vector<double> rrc_taps(double rolloff, int span_symbols, int oversampling) {
    if (rolloff < 0.0 || rolloff > 1.0) throw std::invalid_argument("rrc_taps: rolloff must be in [0, 1]");
    if (span_symbols < 1 || oversampling < 1) throw std::invalid_argument("rrc_taps: bad span/oversampling");
    const int half = span_symbols * oversampling / 2;
    const int n = 2 * half + 1;
    std::vector<double> h(static_cast<std::size_t>(n));
    const double pi = std::numbers::pi;
    for (int k = -half; k <= half; ++k) {
        const double u = double(k) / double(oversampling);  // time in symbols
        double v;
        if (k == 0) {
            v = 1.0 - rolloff + 4.0 * rolloff / pi;
        } else if (rolloff > 0.0 && std::abs(std::abs(4.0 * rolloff * u) - 1.0) < 1e-9) {
            v = (rolloff / std::numbers::sqrt2) *
                ((1.0 + 2.0 / pi) * std::sin(pi / (4.0 * rolloff)) +
                 (1.0 - 2.0 / pi) * std::cos(pi / (4.0 * rolloff)));
        } else {
            const double num = std::sin(pi * u * (1.0 - rolloff)) +
                               4.0 * rolloff * u * std::cos(pi * u * (1.0 + rolloff));
            const double den = pi * u * (1.0 - std::pow(4.0 * rolloff * u, 2));
            v = num / den;
        }
        h[static_cast<std::size_t>(k + half)] = v;
    }
    double energy = 0.0;
    for (double v : h) energy += v * v;
    const double g = 1.0 / std::sqrt(energy);
    for (double& v : h) v *= g;
    return h;
}

// Full convolution, length N + L - 1.
inline std::vector<std::complex<double>> fir_filter(const std::vector<std::complex<double>>& x,
                                                    const std::vector<double>& h) {
    if (x.empty() || h.empty()) throw std::invalid_argument("fir_filter: empty input");
    std::vector<std::complex<double>> y(x.size() + h.size() - 1, {0.0, 0.0});
    for (std::size_t i = 0; i < x.size(); ++i) {
        const std::complex<double> xi = x[i];
        for (std::size_t j = 0; j < h.size(); ++j) y[i + j] += xi * h[j];
    }
    return y;
}

inline std::vector<std::complex<double>> upsample(const std::vector<double>& amps, int factor,
                                                  double scale) {
    std::vector<std::complex<double>> up(amps.size() * static_cast<std::size_t>(factor), {0.0, 0.0});
    for (std::size_t i = 0; i < amps.size(); ++i)
        up[i * static_cast<std::size_t>(factor)] = amps[i] * scale;
    return up;
}

// Chromatic dispersion as the all-pass H(f) = exp(-j*pi*lambda^2*D*L*f^2/c),
// applied over the full-length spectrum of the buffer.
inline WaveformBuffer apply_cd(const WaveformBuffer& wave, const LinkConfig& cfg) {
    if (wave.samples.size() < 2) throw std::invalid_argument("apply_cd: need at least 2 samples");
    constexpr double c_light = 299792458.0;
    const std::size_t n = wave.samples.size();
    const double fs = wave.sample_rate;
    const double coeff = -std::numbers::pi * cfg.wavelength * cfg.wavelength *
                         cfg.dispersion_si() * cfg.fiber_length / c_light;

    fft::cvec spec = wave.samples;
    fft::fft_inplace(spec);
    for (std::size_t k = 0; k < n; ++k) {
        const double idx = (k <= n / 2) ? double(k) : double(k) - double(n);
        const double f = idx * fs / double(n);
        spec[k] *= std::polar(1.0, coeff * f * f);
    }
    fft::ifft_inplace(spec);
    return WaveformBuffer{std::move(spec), fs};
}

inline WaveformBuffer photodiode(const WaveformBuffer& wave) {
    WaveformBuffer out;
    out.sample_rate = wave.sample_rate;
    out.samples.reserve(wave.samples.size());
    for (const auto& s : wave.samples) out.samples.emplace_back(std::norm(s), 0.0);
    return out;
}

// Real-valued AWGN added to the real part; the chain applies it after the
// photodiode where the signal is real.
inline WaveformBuffer add_awgn(const WaveformBuffer& wave, double sigma2, std::mt19937_64& rng) {
    if (sigma2 < 0) throw std::invalid_argument("add_awgn: sigma2 must be >= 0");
    WaveformBuffer out = wave;
    if (sigma2 == 0.0) return out;
    std::normal_distribution<double> dist(0.0, std::sqrt(sigma2));
    for (auto& s : out.samples) s += dist(rng);
    return out;
}

inline int slice_class(double v, const std::array<double, 3>& boundaries) {
    if (v < boundaries[0]) return 0;
    if (v < boundaries[1]) return 1;
    if (v < boundaries[2]) return 2;
    return 3;
}

struct LinkResult {
    SymbolFrame frame;          // transmitted payload symbols
    std::vector<double> y;      // receive samples, one per payload symbol
    double pd_signal_var = 0.0; // variance of the noiseless photodiode output
};

// Full chain of the simulated link:
//   map -> upsample -> RRC -> +bias -> CD -> |.|^2 -> +noise -> RRC -> downsample
// Guard symbols are prepended/appended and discarded so every retained sample
// sees full filter support; the combined group delay of both RRC filters is
// span*oversampling samples and is compensated in the decimation phase.
inline LinkResult simulate_link(const std::vector<BitPair>& bits, const LinkConfig& cfg) {
    cfg.validate();
    if (bits.empty()) throw std::invalid_argument("simulate_link: empty bit sequence");

    std::mt19937_64 rng(cfg.rng_seed);
    const std::size_t n_guard = static_cast<std::size_t>(cfg.guard_symbols);
    const std::vector<BitPair> head = random_bits(n_guard, rng);
    const std::vector<BitPair> tail = random_bits(n_guard, rng);

    std::vector<double> amps;
    amps.reserve(bits.size() + 2 * n_guard);
    auto push_amps = [&amps](const std::vector<BitPair>& bs) {
        for (BitPair b : bs) amps.push_back(amplitude_for_class(class_for_bits(b)));
    };
    push_amps(head);
    push_amps(bits);
    push_amps(tail);

    const int m = cfg.oversampling;
    const std::vector<double> rrc = rrc_taps(cfg.rrc_rolloff, cfg.rrc_span, m);

    WaveformBuffer tx;
    tx.sample_rate = cfg.sample_rate();
    tx.samples = fir_filter(upsample(amps, m, cfg.amp_scale), rrc);
    for (auto& s : tx.samples) s += cfg.bias;

    const WaveformBuffer after_fiber = cfg.fiber_length > 0.0 ? apply_cd(tx, cfg) : std::move(tx);
    const WaveformBuffer detected = photodiode(after_fiber);

    // noise reference: variance of the noiseless detector output over the
    // fully-supported part of the frame
    const std::size_t flt = rrc.size() - 1;
    std::vector<double> core;
    if (detected.samples.size() > 2 * flt + 2) {
        core.reserve(detected.samples.size() - 2 * flt);
        for (std::size_t i = flt; i + flt < detected.samples.size(); ++i)
            core.push_back(detected.samples[i].real());
    } else {
        for (const auto& s : detected.samples) core.push_back(s.real());
    }

    const WaveformBuffer noisy = add_awgn(detected, cfg.noise_sigma2, rng);
    const std::vector<std::complex<double>> rx = fir_filter(noisy.samples, rrc);

    LinkResult result;
    result.pd_signal_var = variance(core);
    result.frame = map_pam4(bits);
    result.y.resize(bits.size());
    const std::size_t delay = flt;  // two half-filter group delays, in samples
    for (std::size_t t = 0; t < bits.size(); ++t) {
        const std::size_t idx = (n_guard + t) * static_cast<std::size_t>(m) + delay;
        result.y[t] = rx[idx].real();
    }
    return result;
}

}  // namespace spikeq
