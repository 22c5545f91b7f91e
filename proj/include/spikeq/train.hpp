#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "spikeq/common.hpp"
#include "spikeq/encoder.hpp"
#include "spikeq/snn.hpp"

// Backpropagation through time over the unrolled dynamics. The readout peak
// values feed a softmax cross-entropy; the peak step of each readout routes
// the loss gradient into the trace (the max is piecewise smooth in the
// weights). Hidden threshold crossings use the surrogate derivative
//   g(v) = 1 / (1 + beta_s |v - threshold|)^2
// and the reset is treated as straight-through: the adjoint flows through the
// membrane as if no reset had occurred. In smoothed mode the same adjoint
// recursion is the exact gradient, which is what the finite-difference tests
// pin down.

namespace spikeq {

struct TrainConfig {
    double lr = 2e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    int batch_size = 256;
    int epochs = 20;
    double surrogate_beta = 10.0;
    double val_fraction = 0.1;
    std::uint64_t rng_seed = 1;
    int workers = 0;  // 0 = honor SPIKEQ_WORKERS / hardware default

    void validate() const {
        if (!(lr > 0)) throw std::invalid_argument("TrainConfig: lr must be > 0");
        if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1)
            throw std::invalid_argument("TrainConfig: betas must lie in [0, 1)");
        if (!(eps >= 0)) throw std::invalid_argument("TrainConfig: eps must be >= 0");
        if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
        if (epochs < 0) throw std::invalid_argument("TrainConfig: epochs must be >= 0");
        if (!(surrogate_beta > 0)) throw std::invalid_argument("TrainConfig: surrogate_beta must be > 0");
        if (val_fraction < 0 || val_fraction >= 1)
            throw std::invalid_argument("TrainConfig: val_fraction must lie in [0, 1)");
    }
};

struct LossResult {
    double value = 0.0;
    std::vector<double> prob;    // softmax over readout maxima
    std::vector<double> grad_m;  // d loss / d m_k
};

inline LossResult softmax_ce(const std::vector<double>& logits, int label) {
    const std::size_t n = logits.size();
    if (label < 0 || static_cast<std::size_t>(label) >= n)
        throw std::invalid_argument("softmax_ce: label out of range");
    LossResult r;
    r.prob.resize(n);
    r.grad_m.resize(n);
    const double hi = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        r.prob[k] = std::exp(logits[k] - hi);
        z += r.prob[k];
    }
    for (std::size_t k = 0; k < n; ++k) r.prob[k] /= z;
    r.value = std::log(z) - (logits[static_cast<std::size_t>(label)] - hi);
    for (std::size_t k = 0; k < n; ++k)
        r.grad_m[k] = r.prob[k] - (static_cast<int>(k) == label ? 1.0 : 0.0);
    return r;
}

inline LossResult loss_from_maxima(const ReadoutMax& maxima, int label) {
    return softmax_ce(maxima.value, label);
}

struct Gradients {
    Matrix w_ih;
    Matrix w_ho;

    void accumulate(const Gradients& o) {
        for (std::size_t i = 0; i < w_ih.a.size(); ++i) w_ih.a[i] += o.w_ih.a[i];
        for (std::size_t i = 0; i < w_ho.a.size(); ++i) w_ho.a[i] += o.w_ho.a[i];
    }
    void scale(double s) {
        for (auto& g : w_ih.a) g *= s;
        for (auto& g : w_ho.a) g *= s;
    }
};

struct ReadoutBackward {
    Matrix gw;  // [n_out][n_hidden]
    Matrix gs;  // [T][n_hidden], adjoint of the hidden spike values
};

// Adjoints of the leaky-integrator readout. The dynamics are linear in the
// spikes, so this needs no membrane trace: only the spike values (for the
// weight gradient) and the peak steps that route grad_m into the window.
inline ReadoutBackward backward_readout(const Matrix& spikes, const Matrix& w_ho,
                                        const LifCoeffs& co, const std::vector<double>& grad_m,
                                        const std::vector<int>& at_step) {
    const std::size_t T = spikes.rows;
    const std::size_t H = spikes.cols;
    const std::size_t O = w_ho.rows;
    if (w_ho.cols != H || grad_m.size() != O || at_step.size() != O)
        throw std::invalid_argument("backward_readout: shape mismatch");

    ReadoutBackward out;
    out.gw = Matrix(O, H);
    out.gs = Matrix(T, H);
    std::vector<double> gv_next(O, 0.0), gi_next(O, 0.0);
    std::vector<double> gv(O), gi(O);
    for (std::size_t t = T; t-- > 0;) {
        for (std::size_t k = 0; k < O; ++k) {
            gi[k] = co.input_gain * gv_next[k] + co.decay_s * gi_next[k];
            gv[k] = co.decay_m * gv_next[k] +
                    (at_step[k] == static_cast<int>(t) ? grad_m[k] : 0.0);
        }
        const double* sp = spikes.row(t);
        double* gs = out.gs.row(t);
        for (std::size_t k = 0; k < O; ++k) {
            if (gi[k] == 0.0) continue;
            double* gw = out.gw.row(k);
            const double* wk = w_ho.row(k);
            for (std::size_t j = 0; j < H; ++j) {
                gw[j] += gi[k] * sp[j];
                gs[j] += gi[k] * wk[j];
            }
        }
        std::swap(gv, gv_next);
        std::swap(gi, gi_next);
    }
    return out;
}

// Full BPTT step for one sample. `at_step` comes from readout_maxima on the
// forward trace; grad_m from the loss.
inline Gradients backward(const SpikeRaster& raster, const SnnTrace& tr, const SnnParams& params,
                          const std::vector<double>& grad_m, const std::vector<int>& at_step,
                          double surrogate_beta) {
    const std::size_t T = static_cast<std::size_t>(tr.n_steps);
    const std::size_t H = params.n_hidden();
    const LifCoeffs ch = LifCoeffs::from(params.hidden, params.dt);
    const LifCoeffs co = LifCoeffs::from(params.readout, params.dt);

    ReadoutBackward rb = backward_readout(tr.spikes, params.w_ho, co, grad_m, at_step);

    Gradients g;
    g.w_ho = std::move(rb.gw);
    g.w_ih = Matrix(H, params.n_inputs());

    // inputs bucketed by spike step so the weight gradient is picked up the
    // moment the sweep passes the injection
    const int n_in = raster.n_inputs();
    std::vector<std::vector<int>> fired_at(T);
    for (int col = 0; col < n_in; ++col) {
        const std::int16_t s = raster.step[static_cast<std::size_t>(col)];
        if (s >= 0 && s < static_cast<std::int16_t>(T)) fired_at[static_cast<std::size_t>(s)].push_back(col);
    }

    std::vector<double> gv_next(H, 0.0), gi_next(H, 0.0);
    std::vector<double> gv(H), gi(H);
    const double theta = params.hidden.threshold;
    for (std::size_t t = T; t-- > 0;) {
        const double* vpre = tr.v_h_pre.row(t);
        const double* gs = rb.gs.row(t);
        for (std::size_t j = 0; j < H; ++j) {
            gi[j] = ch.input_gain * gv_next[j] + ch.decay_s * gi_next[j];
            gv[j] = gs[j] * surrogate_grad(vpre[j], theta, surrogate_beta) + ch.decay_m * gv_next[j];
        }
        for (const int col : fired_at[t])
            for (std::size_t j = 0; j < H; ++j) g.w_ih(j, static_cast<std::size_t>(col)) = gi[j];
        std::swap(gv, gv_next);
        std::swap(gi, gi_next);
    }
    return g;
}

struct AdamState {
    std::vector<double> m;
    std::vector<double> v;

    explicit AdamState(std::size_t n) : m(n, 0.0), v(n, 0.0) {}
};

inline void adam_step(std::span<double> w, std::span<const double> g, AdamState& st, int t,
                      const TrainConfig& cfg) {
    if (t < 1) throw std::invalid_argument("adam_step: step count must be >= 1");
    if (w.size() != g.size() || st.m.size() != w.size())
        throw std::invalid_argument("adam_step: shape mismatch");
    const double bc1 = 1.0 - std::pow(cfg.beta1, t);
    const double bc2 = 1.0 - std::pow(cfg.beta2, t);
    for (std::size_t i = 0; i < w.size(); ++i) {
        st.m[i] = cfg.beta1 * st.m[i] + (1.0 - cfg.beta1) * g[i];
        st.v[i] = cfg.beta2 * st.v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
        const double mhat = st.m[i] / bc1;
        const double vhat = st.v[i] / bc2;
        w[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
}

inline void adam_step(Matrix& w, const Matrix& g, AdamState& st, int t, const TrainConfig& cfg) {
    if (!w.same_shape(g)) throw std::invalid_argument("adam_step: shape mismatch");
    adam_step(std::span<double>(w.a), std::span<const double>(g.a), st, t, cfg);
}

struct EvalCounts {
    std::uint64_t n_symbols = 0;
    std::uint64_t symbol_errors = 0;
    std::uint64_t bit_errors = 0;

    double ser() const { return n_symbols ? double(symbol_errors) / double(n_symbols) : 0.0; }
    double ber() const { return n_symbols ? double(bit_errors) / double(2.0 * double(n_symbols)) : 0.0; }
};

inline EvalCounts evaluate_snn(const EncodedStream& stream, std::span<const BitPair> bits,
                               const SnnParams& params, int n_tap, int workers = 0,
                               std::size_t begin = 0, std::size_t end = SIZE_MAX) {
    if (bits.size() != stream.n_samples)
        throw std::invalid_argument("evaluate_snn: label count does not match stream");
    end = std::min(end, stream.n_samples);
    if (begin > end) throw std::invalid_argument("evaluate_snn: bad range");
    const std::size_t n = end - begin;
    std::vector<unsigned char> biterr(n, 0);
    parallel_for(n, workers ? workers : default_workers(), [&](std::size_t i) {
        const SpikeRaster r = raster_at(stream, begin + i, n_tap);
        const SnnTrace tr = forward(r, params);
        const Decision d = decide(tr);
        biterr[i] = static_cast<unsigned char>(hamming2(d.bits, bits[begin + i]));
    });
    EvalCounts c;
    c.n_symbols = n;
    for (std::size_t i = 0; i < n; ++i) {
        c.bit_errors += biterr[i];
        c.symbol_errors += biterr[i] ? 1 : 0;
    }
    return c;
}

struct EpochLog {
    int epoch = 0;
    double train_loss = 0.0;
    double val_ser = 0.0;
    double val_ber = 0.0;
};

struct FitResult {
    SnnParams params;        // best validation BER (final epoch if no val split)
    SnnParams final_params;  // after the last optimizer step
    std::vector<EpochLog> log;
    int best_epoch = -1;
    double best_val_ber = std::numeric_limits<double>::quiet_NaN();
};

// Minibatch training with a held-out validation tail. Per-sample gradients
// land in their own slots and are reduced in index order, so results are
// byte-identical for any worker count.
inline FitResult fit_snn(const EncodedStream& stream, std::span<const BitPair> bits,
                         const SnnParams& init, int n_tap, const TrainConfig& cfg) {
    cfg.validate();
    init.validate();
    if (bits.size() != stream.n_samples)
        throw std::invalid_argument("fit_snn: label count does not match stream");

    const std::size_t n = stream.n_samples;
    const std::size_t n_val = static_cast<std::size_t>(std::llround(cfg.val_fraction * double(n)));
    const std::size_t n_train = n - n_val;
    if (n_train == 0) throw std::invalid_argument("fit_snn: no training samples after split");
    const int workers = cfg.workers ? cfg.workers : default_workers();

    FitResult res;
    res.params = init;
    SnnParams cur = init;
    AdamState st_ih(cur.w_ih.a.size());
    AdamState st_ho(cur.w_ho.a.size());
    int adam_t = 0;

    std::vector<std::size_t> order(n_train);
    for (std::size_t i = 0; i < n_train; ++i) order[i] = i;

    const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);
    std::vector<Gradients> slot(bs);
    std::vector<double> slot_loss(bs);

    double best_ber = std::numeric_limits<double>::infinity();
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::mt19937_64 shuffle_rng(derive_seed(cfg.rng_seed, 0x1001, static_cast<std::uint64_t>(epoch)));
        std::shuffle(order.begin(), order.end(), shuffle_rng);

        double loss_sum = 0.0;
        for (std::size_t base = 0; base < n_train; base += bs) {
            const std::size_t b = std::min(bs, n_train - base);
            parallel_for(b, workers, [&](std::size_t i) {
                const std::size_t sample = order[base + i];
                const SpikeRaster r = raster_at(stream, sample, n_tap);
                const SnnTrace tr = forward(r, cur);
                const ReadoutMax mx = readout_maxima(tr);
                const int label = class_for_bits(bits[sample]);
                const LossResult loss = loss_from_maxima(mx, label);
                slot[i] = backward(r, tr, cur, loss.grad_m, mx.at_step, cfg.surrogate_beta);
                slot_loss[i] = loss.value;
            });
            Gradients sum = std::move(slot[0]);
            double batch_loss = slot_loss[0];
            for (std::size_t i = 1; i < b; ++i) {
                sum.accumulate(slot[i]);
                batch_loss += slot_loss[i];
            }
            sum.scale(1.0 / double(b));
            batch_loss /= double(b);
            if (!std::isfinite(batch_loss))
                throw std::runtime_error("fit_snn: loss diverged at epoch " + std::to_string(epoch) +
                                         ", batch " + std::to_string(base / bs));
            loss_sum += batch_loss * double(b);
            ++adam_t;
            adam_step(cur.w_ih, sum.w_ih, st_ih, adam_t, cfg);
            adam_step(cur.w_ho, sum.w_ho, st_ho, adam_t, cfg);
        }

        EpochLog log;
        log.epoch = epoch;
        log.train_loss = loss_sum / double(n_train);
        if (n_val > 0) {
            const EvalCounts val = evaluate_snn(stream, bits, cur, n_tap, workers, n_train, n);
            log.val_ser = val.ser();
            log.val_ber = val.ber();
            // ties keep the later snapshot: once validation saturates (BER 0
            // on an easy slice) further training still polishes the margins
            if (log.val_ber <= best_ber) {
                best_ber = log.val_ber;
                res.params = cur;
                res.best_epoch = epoch;
                res.best_val_ber = best_ber;
            }
        }
        res.log.push_back(log);
    }
    res.final_params = cur;
    if (n_val == 0 || cfg.epochs == 0) res.params = cur;
    return res;
}

}  // namespace spikeq
