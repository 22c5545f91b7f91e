#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "spikeq/common.hpp"

// Latency spike encoding: each input neuron i owns a reference point chi_i
// and fires once at a time given by the scaled log-distance
//   tau_i = scale * log(d / (d - beta)),  d = |A - |y - chi_i||,
// so samples close to chi_i (d near A) fire early. Neurons with d <= beta,
// or whose time lands past t_max, stay silent.

namespace spikeq {

inline constexpr std::int16_t kNoSpike = -1;

struct EncoderConfig {
    int n_tap = 17;
    int neurons_per_sample = 10;
    std::vector<double> refs;  // strictly increasing reference points
    double amp = 1.0;          // A
    double beta = 0.1;         // distance cutoff, < A
    double kappa = 0.5;        // scale = kappa * t_max / log(A / (A - beta))
    double t_max = 29.0;       // last usable grid instant
    double dt = 1.0;           // grid step

    double time_scale() const { return kappa * t_max / std::log(amp / (amp - beta)); }

    void validate() const {
        if (n_tap < 1 || n_tap % 2 == 0) throw std::invalid_argument("EncoderConfig: n_tap must be odd");
        if (neurons_per_sample < 1) throw std::invalid_argument("EncoderConfig: neurons_per_sample must be >= 1");
        if (refs.size() != static_cast<std::size_t>(neurons_per_sample))
            throw std::invalid_argument("EncoderConfig: refs size must equal neurons_per_sample");
        for (std::size_t i = 1; i < refs.size(); ++i)
            if (!(refs[i] > refs[i - 1]))
                throw std::invalid_argument("EncoderConfig: refs must be strictly increasing");
        if (!(amp > 0)) throw std::invalid_argument("EncoderConfig: amp must be > 0");
        if (!(beta > 0) || !(beta < amp)) throw std::invalid_argument("EncoderConfig: need 0 < beta < amp");
        if (!(kappa > 0)) throw std::invalid_argument("EncoderConfig: kappa must be > 0");
        if (!(t_max > 0)) throw std::invalid_argument("EncoderConfig: t_max must be > 0");
        if (!(dt > 0)) throw std::invalid_argument("EncoderConfig: dt must be > 0");
    }
};

// Spike step indices (multiples of dt) per window row and neuron; kNoSpike
// marks silence.
struct SpikeRaster {
    int n_tap = 0;
    int neurons_per_sample = 0;
    std::vector<std::int16_t> step;  // row-major [n_tap][neurons_per_sample]

    std::int16_t at(int row, int neuron) const {
        return step[static_cast<std::size_t>(row) * static_cast<std::size_t>(neurons_per_sample) +
                    static_cast<std::size_t>(neuron)];
    }
    int n_inputs() const { return n_tap * neurons_per_sample; }
};

inline void encode_sample(double y, const EncoderConfig& cfg, std::span<std::int16_t> out) {
    const double scale = cfg.time_scale();
    for (int i = 0; i < cfg.neurons_per_sample; ++i) {
        const double d = std::abs(cfg.amp - std::abs(y - cfg.refs[static_cast<std::size_t>(i)]));
        if (d <= cfg.beta) {
            out[static_cast<std::size_t>(i)] = kNoSpike;
            continue;
        }
        const double tau = scale * std::log(d / (d - cfg.beta));
        if (tau > cfg.t_max) {
            out[static_cast<std::size_t>(i)] = kNoSpike;
            continue;
        }
        out[static_cast<std::size_t>(i)] = static_cast<std::int16_t>(std::lround(tau / cfg.dt));
    }
}

inline std::vector<std::int16_t> encode_sample(double y, const EncoderConfig& cfg) {
    std::vector<std::int16_t> out(static_cast<std::size_t>(cfg.neurons_per_sample));
    encode_sample(y, cfg, out);
    return out;
}

inline SpikeRaster encode_window(std::span<const double> window, const EncoderConfig& cfg) {
    cfg.validate();
    if (window.size() != static_cast<std::size_t>(cfg.n_tap))
        throw std::invalid_argument("encode_window: window length must equal n_tap");
    SpikeRaster raster;
    raster.n_tap = cfg.n_tap;
    raster.neurons_per_sample = cfg.neurons_per_sample;
    raster.step.resize(window.size() * static_cast<std::size_t>(cfg.neurons_per_sample));
    for (int r = 0; r < cfg.n_tap; ++r) {
        std::span<std::int16_t> row(raster.step.data() +
                                        static_cast<std::size_t>(r) *
                                            static_cast<std::size_t>(cfg.neurons_per_sample),
                                    static_cast<std::size_t>(cfg.neurons_per_sample));
        encode_sample(window[static_cast<std::size_t>(r)], cfg, row);
    }
    return raster;
}

// Per-sample encodings for a whole stream; windows are assembled by row reuse
// since the encoding depends only on the sample value.
struct EncodedStream {
    int neurons_per_sample = 0;
    std::size_t n_samples = 0;
    std::vector<std::int16_t> rows;  // [n_samples][neurons_per_sample]
};

inline EncodedStream encode_stream(std::span<const double> y, const EncoderConfig& cfg) {
    cfg.validate();
    EncodedStream s;
    s.neurons_per_sample = cfg.neurons_per_sample;
    s.n_samples = y.size();
    s.rows.resize(y.size() * static_cast<std::size_t>(cfg.neurons_per_sample));
    for (std::size_t t = 0; t < y.size(); ++t)
        encode_sample(y[t], cfg,
                      std::span<std::int16_t>(s.rows.data() + t * static_cast<std::size_t>(cfg.neurons_per_sample),
                                              static_cast<std::size_t>(cfg.neurons_per_sample)));
    return s;
}

// Window of per-sample rows centered at t; stream edges replicate the first
// and last sample so the dataset keeps one window per symbol.
inline SpikeRaster raster_at(const EncodedStream& s, std::size_t t, int n_tap) {
    if (s.n_samples == 0) throw std::invalid_argument("raster_at: empty stream");
    SpikeRaster raster;
    raster.n_tap = n_tap;
    raster.neurons_per_sample = s.neurons_per_sample;
    const std::size_t nps = static_cast<std::size_t>(s.neurons_per_sample);
    raster.step.resize(static_cast<std::size_t>(n_tap) * nps);
    const long half = n_tap / 2;
    for (int r = 0; r < n_tap; ++r) {
        long src = static_cast<long>(t) - half + r;
        src = std::clamp(src, 0L, static_cast<long>(s.n_samples) - 1);
        std::copy_n(s.rows.data() + static_cast<std::size_t>(src) * nps, nps,
                    raster.step.data() + static_cast<std::size_t>(r) * nps);
    }
    return raster;
}

// Data-driven encoder setup: reference points span the empirical range of the
// training stream, A is half that range scaled by amp_margin, beta = A/10.
//
// At amp_margin = 1 the distance fold |A - |y - ref|| maps the empirical min
// and max of y onto the same code on every reference point, so streams whose
// extreme values matter (a noiseless link, where two constellation levels hug
// the range edges) want a margin > 1 to keep the encoding injective.
inline EncoderConfig fit_encoder(std::span<const double> y_train, int n_tap, int neurons_per_sample,
                                 double t_max, double dt, double kappa = 0.5,
                                 double amp_margin = 1.0) {
    if (y_train.size() < 2) throw std::invalid_argument("fit_encoder: need at least 2 samples");
    if (!(amp_margin > 0)) throw std::invalid_argument("fit_encoder: amp_margin must be > 0");
    auto [mn_it, mx_it] = std::minmax_element(y_train.begin(), y_train.end());
    const double lo = *mn_it, hi = *mx_it;
    if (!(hi > lo)) throw std::invalid_argument("fit_encoder: degenerate constant stream");
    EncoderConfig cfg;
    cfg.n_tap = n_tap;
    cfg.neurons_per_sample = neurons_per_sample;
    cfg.t_max = t_max;
    cfg.dt = dt;
    cfg.kappa = kappa;
    cfg.refs.resize(static_cast<std::size_t>(neurons_per_sample));
    for (int i = 0; i < neurons_per_sample; ++i)
        cfg.refs[static_cast<std::size_t>(i)] =
            lo + (hi - lo) * double(i) / double(std::max(1, neurons_per_sample - 1));
    cfg.amp = amp_margin * 0.5 * (hi - lo);
    cfg.beta = cfg.amp / 10.0;
    cfg.validate();
    return cfg;
}

}  // namespace spikeq
