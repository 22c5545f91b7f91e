#pragma once

#include <array>
#include <cmath>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "spikeq/common.hpp"
#include "spikeq/encoder.hpp"

// Time-stepped LIF / LI dynamics:
//   tau_m dv/dt = -(v - v_leak) + I,   tau_syn dI/dt = -I (+ weighted spikes)
// integrated exactly between grid events. Over one step dt,
//   v' = v_leak + (v - v_leak)*exp(-dt/tau_m) + I * c_I
//   c_I = tau_syn/(tau_syn - tau_m) * (exp(-dt/tau_syn) - exp(-dt/tau_m))
// so the discrete trace coincides with the closed-form ODE solution at grid
// times for spikes arriving on the grid. An input spike at step t enters the
// current at t and moves the membrane from t+1 on, matching the continuous
// solution where v is untouched at the arrival instant.

namespace spikeq {

struct NeuronParams {
    double tau_m = 10.0;
    double tau_syn = 5.0;
    double threshold = 1.0;  // ignored by LI readouts
    double v_leak = 0.0;
    double v_reset = 0.0;    // ignored by LI readouts

    void validate(bool spiking) const {
        if (!(tau_m > 0) || !(tau_syn > 0))
            throw std::invalid_argument("NeuronParams: time constants must be > 0");
        if (tau_m == tau_syn)
            throw std::invalid_argument("NeuronParams: tau_m == tau_syn is degenerate");
        if (spiking) {
            if (!(threshold > v_leak))
                throw std::invalid_argument("NeuronParams: threshold must exceed v_leak");
            if (!(v_reset <= v_leak))
                throw std::invalid_argument("NeuronParams: v_reset must not exceed v_leak");
        }
    }
};

struct LifCoeffs {
    double decay_m = 0.0;   // exp(-dt/tau_m)
    double decay_s = 0.0;   // exp(-dt/tau_syn)
    double input_gain = 0.0;

    static LifCoeffs from(const NeuronParams& p, double dt) {
        LifCoeffs c;
        c.decay_m = std::exp(-dt / p.tau_m);
        c.decay_s = std::exp(-dt / p.tau_syn);
        c.input_gain = p.tau_syn / (p.tau_syn - p.tau_m) * (c.decay_s - c.decay_m);
        return c;
    }
};

// How hidden spikes are produced. `hard` is the deployed model; `smoothed`
// replaces the step function with a differentiable stand-in whose derivative
// equals the training surrogate, used for gradient verification.
enum class SpikeModel { hard, smoothed };

inline double surrogate_grad(double v, double threshold, double beta_s) {
    const double u = 1.0 + beta_s * std::abs(v - threshold);
    return 1.0 / (u * u);
}

inline double smoothed_spike(double v, double threshold, double beta_s) {
    const double x = v - threshold;
    return 0.5 + x / (1.0 + beta_s * std::abs(x));
}

struct SnnParams {
    Matrix w_ih;  // [n_hidden][n_inputs]
    Matrix w_ho;  // [n_out][n_hidden]
    NeuronParams hidden;
    NeuronParams readout;
    int n_steps = 30;
    double dt = 1.0;

    std::size_t n_inputs() const { return w_ih.cols; }
    std::size_t n_hidden() const { return w_ih.rows; }
    std::size_t n_out() const { return w_ho.rows; }

    void validate() const {
        hidden.validate(true);
        readout.validate(false);
        if (w_ho.cols != w_ih.rows) throw std::invalid_argument("SnnParams: layer size mismatch");
        if (n_steps < 1) throw std::invalid_argument("SnnParams: n_steps must be >= 1");
        if (!(dt > 0)) throw std::invalid_argument("SnnParams: dt must be > 0");
    }
};

inline SnnParams init_snn(std::size_t n_inputs, std::size_t n_hidden, std::size_t n_out,
                          const NeuronParams& hidden, const NeuronParams& readout, int n_steps,
                          double dt, std::mt19937_64& rng) {
    SnnParams p;
    p.w_ih = Matrix(n_hidden, n_inputs);
    p.w_ho = Matrix(n_out, n_hidden);
    p.hidden = hidden;
    p.readout = readout;
    p.n_steps = n_steps;
    p.dt = dt;
    std::normal_distribution<double> d_ih(0.0, 1.0 / std::sqrt(double(n_inputs)));
    std::normal_distribution<double> d_ho(0.0, 1.0 / std::sqrt(double(n_hidden)));
    for (auto& w : p.w_ih.a) w = d_ih(rng);
    for (auto& w : p.w_ho.a) w = d_ho(rng);
    p.validate();
    return p;
}

struct SnnTrace {
    int n_steps = 0;
    Matrix i_h;      // [T][n_hidden]
    Matrix v_h_pre;  // membrane before threshold test
    Matrix v_h;      // membrane after reset
    Matrix spikes;   // 0/1 (hard) or smoothed values
    Matrix i_o;      // [T][n_out]
    Matrix v_o;
};

// One exact-integration step for a LIF population: membrane flows under the
// held current, spikes are detected and reset, then the current decays and
// absorbs this step's input spikes. `in_spikes` is dense; forward() uses a
// fused equivalent with precomputed sparse injections.
inline void lif_step(std::vector<double>& v, std::vector<double>& i_syn,
                     const std::vector<double>& in_spikes, const Matrix& w, const NeuronParams& p,
                     const LifCoeffs& c, std::vector<double>& out_spikes) {
    const std::size_t n = v.size();
    if (i_syn.size() != n || w.rows != n || w.cols != in_spikes.size() || out_spikes.size() != n)
        throw std::invalid_argument("lif_step: shape mismatch");
    for (std::size_t j = 0; j < n; ++j) {
        double vj = p.v_leak + (v[j] - p.v_leak) * c.decay_m + i_syn[j] * c.input_gain;
        if (!std::isfinite(vj)) throw std::runtime_error("lif_step: non-finite membrane at neuron " + std::to_string(j));
        const bool fired = vj >= p.threshold;
        out_spikes[j] = fired ? 1.0 : 0.0;
        v[j] = fired ? p.v_reset : vj;
    }
    for (std::size_t j = 0; j < n; ++j) {
        double acc = i_syn[j] * c.decay_s;
        const double* wr = w.row(j);
        for (std::size_t i = 0; i < w.cols; ++i) acc += wr[i] * in_spikes[i];
        i_syn[j] = acc;
    }
}

// Same dynamics without threshold or reset.
inline void li_step(std::vector<double>& v, std::vector<double>& i_syn,
                    const std::vector<double>& in_spikes, const Matrix& w, const NeuronParams& p,
                    const LifCoeffs& c) {
    const std::size_t n = v.size();
    if (i_syn.size() != n || w.rows != n || w.cols != in_spikes.size())
        throw std::invalid_argument("li_step: shape mismatch");
    for (std::size_t j = 0; j < n; ++j) {
        double vj = p.v_leak + (v[j] - p.v_leak) * c.decay_m + i_syn[j] * c.input_gain;
        if (!std::isfinite(vj)) throw std::runtime_error("li_step: non-finite membrane at neuron " + std::to_string(j));
        v[j] = vj;
    }
    for (std::size_t j = 0; j < n; ++j) {
        double acc = i_syn[j] * c.decay_s;
        const double* wr = w.row(j);
        for (std::size_t i = 0; i < w.cols; ++i) acc += wr[i] * in_spikes[i];
        i_syn[j] = acc;
    }
}

// Full forward pass over the grid; returns the complete trace needed by BPTT.
inline SnnTrace forward(const SpikeRaster& raster, const SnnParams& params,
                        SpikeModel model = SpikeModel::hard, double surrogate_beta = 10.0) {
    params.validate();
    if (static_cast<std::size_t>(raster.n_inputs()) != params.n_inputs())
        throw std::invalid_argument("forward: raster size does not match input weights");

    const int T = params.n_steps;
    const std::size_t H = params.n_hidden();
    const std::size_t O = params.n_out();
    const LifCoeffs ch = LifCoeffs::from(params.hidden, params.dt);
    const LifCoeffs co = LifCoeffs::from(params.readout, params.dt);

    SnnTrace tr;
    tr.n_steps = T;
    tr.i_h = Matrix(static_cast<std::size_t>(T), H);
    tr.v_h_pre = Matrix(static_cast<std::size_t>(T), H);
    tr.v_h = Matrix(static_cast<std::size_t>(T), H);
    tr.spikes = Matrix(static_cast<std::size_t>(T), H);
    tr.i_o = Matrix(static_cast<std::size_t>(T), O);
    tr.v_o = Matrix(static_cast<std::size_t>(T), O);

    // input spike injections bucketed per step: each input neuron fires at
    // most once, so this is a single sweep over the raster
    Matrix inj(static_cast<std::size_t>(T), H);
    const int n_in = raster.n_inputs();
    for (int col = 0; col < n_in; ++col) {
        const std::int16_t s = raster.step[static_cast<std::size_t>(col)];
        if (s < 0 || s >= T) continue;
        double* dst = inj.row(static_cast<std::size_t>(s));
        for (std::size_t j = 0; j < H; ++j) dst[j] += params.w_ih(j, static_cast<std::size_t>(col));
    }

    const double leak_h = params.hidden.v_leak;
    const double leak_o = params.readout.v_leak;
    for (int t = 0; t < T; ++t) {
        const std::size_t tt = static_cast<std::size_t>(t);
        const double* vh_prev = t > 0 ? tr.v_h.row(tt - 1) : nullptr;
        const double* ih_prev = t > 0 ? tr.i_h.row(tt - 1) : nullptr;
        double* vh_pre = tr.v_h_pre.row(tt);
        double* vh = tr.v_h.row(tt);
        double* ih = tr.i_h.row(tt);
        double* sp = tr.spikes.row(tt);
        const double* in = inj.row(tt);
        for (std::size_t j = 0; j < H; ++j) {
            const double vprev = t > 0 ? vh_prev[j] : leak_h;
            const double iprev = t > 0 ? ih_prev[j] : 0.0;
            const double v = leak_h + (vprev - leak_h) * ch.decay_m + iprev * ch.input_gain;
            vh_pre[j] = v;
            if (model == SpikeModel::hard) {
                const bool fired = v >= params.hidden.threshold;
                sp[j] = fired ? 1.0 : 0.0;
                vh[j] = fired ? params.hidden.v_reset : v;
            } else {
                sp[j] = smoothed_spike(v, params.hidden.threshold, surrogate_beta);
                vh[j] = v;
            }
            ih[j] = iprev * ch.decay_s + in[j];
        }

        const double* vo_prev = t > 0 ? tr.v_o.row(tt - 1) : nullptr;
        const double* io_prev = t > 0 ? tr.i_o.row(tt - 1) : nullptr;
        double* vo = tr.v_o.row(tt);
        double* io = tr.i_o.row(tt);
        for (std::size_t k = 0; k < O; ++k) {
            const double vprev = t > 0 ? vo_prev[k] : leak_o;
            const double iprev = t > 0 ? io_prev[k] : 0.0;
            vo[k] = leak_o + (vprev - leak_o) * co.decay_m + iprev * co.input_gain;
            double acc = iprev * co.decay_s;
            const double* whk = params.w_ho.row(k);
            for (std::size_t j = 0; j < H; ++j) acc += whk[j] * sp[j];
            io[k] = acc;
        }
    }

    for (std::size_t k = 0; k < O; ++k)
        if (!std::isfinite(tr.v_o(static_cast<std::size_t>(T - 1), k)))
            throw std::runtime_error("forward: non-finite readout trace at neuron " + std::to_string(k));
    return tr;
}

struct ReadoutTrace {
    Matrix i_o;  // [T][n_out]
    Matrix v_o;
};

// Leaky-integrator population driven by an arbitrary dense spike train,
// outside any network. Same step convention as forward().
inline ReadoutTrace integrate_readout(const Matrix& spikes, const Matrix& w,
                                      const NeuronParams& p, double dt) {
    p.validate(false);
    if (w.cols != spikes.cols) throw std::invalid_argument("integrate_readout: shape mismatch");
    const std::size_t T = spikes.rows;
    const std::size_t O = w.rows;
    const LifCoeffs c = LifCoeffs::from(p, dt);
    ReadoutTrace tr;
    tr.i_o = Matrix(T, O);
    tr.v_o = Matrix(T, O);
    for (std::size_t t = 0; t < T; ++t) {
        const double* sp = spikes.row(t);
        for (std::size_t k = 0; k < O; ++k) {
            const double vprev = t > 0 ? tr.v_o(t - 1, k) : p.v_leak;
            const double iprev = t > 0 ? tr.i_o(t - 1, k) : 0.0;
            tr.v_o(t, k) = p.v_leak + (vprev - p.v_leak) * c.decay_m + iprev * c.input_gain;
            double acc = iprev * c.decay_s;
            const double* wk = w.row(k);
            for (std::size_t j = 0; j < w.cols; ++j) acc += wk[j] * sp[j];
            tr.i_o(t, k) = acc;
        }
    }
    return tr;
}

struct ReadoutMax {
    std::vector<double> value;  // max_t v_o[t][k]
    std::vector<int> at_step;   // last step attaining the max
};

// Peak membrane per readout and the step it occurs at. Ties take the last
// step: a flat (all-silent) trace then anchors its subgradient at the final
// step, which keeps the backward recursion alive through the whole window
// instead of truncating it at step 0.
inline ReadoutMax readout_maxima(const Matrix& v_o) {
    const std::size_t O = v_o.cols;
    ReadoutMax m;
    m.value.assign(O, 0.0);
    m.at_step.assign(O, 0);
    for (std::size_t k = 0; k < O; ++k) {
        double best = v_o(0, k);
        int best_t = 0;
        for (std::size_t t = 1; t < v_o.rows; ++t) {
            const double v = v_o(t, k);
            if (v >= best) {
                best = v;
                best_t = static_cast<int>(t);
            }
        }
        m.value[k] = best;
        m.at_step[k] = best_t;
    }
    return m;
}

inline ReadoutMax readout_maxima(const SnnTrace& tr) { return readout_maxima(tr.v_o); }

struct Decision {
    int cls = 0;
    BitPair bits;
};

// Class of the readout neuron whose membrane peaks highest over the window;
// ties resolve to the smallest class index.
inline Decision decide(const SnnTrace& tr) {
    const ReadoutMax m = readout_maxima(tr);
    int best = 0;
    for (std::size_t k = 1; k < m.value.size(); ++k)
        if (m.value[k] > m.value[best]) best = static_cast<int>(k);
    return Decision{best, bits_for_class(best)};
}

}  // namespace spikeq
