#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "spikeq/common.hpp"
#include "spikeq/link.hpp"
#include "spikeq/train.hpp"

// Reference equalizers: a linear MMSE filter with optimized slicer
// boundaries, and fully connected ReLU networks trained on the same windows.

namespace spikeq {

// Solves A x = b for symmetric positive definite A via Cholesky. Returns
// false when a pivot is non-positive or non-finite; A and b are clobbered.
inline bool cholesky_solve(Matrix& A, std::vector<double>& b, std::vector<double>& x) {
    const std::size_t n = A.rows;
    if (A.cols != n || b.size() != n) throw std::invalid_argument("cholesky_solve: shape mismatch");
    for (std::size_t j = 0; j < n; ++j) {
        double d = A(j, j);
        for (std::size_t k = 0; k < j; ++k) d -= A(j, k) * A(j, k);
        if (!(d > 0.0) || !std::isfinite(d)) return false;
        const double l = std::sqrt(d);
        A(j, j) = l;
        for (std::size_t i = j + 1; i < n; ++i) {
            double s = A(i, j);
            for (std::size_t k = 0; k < j; ++k) s -= A(i, k) * A(j, k);
            A(i, j) = s / l;
        }
    }
    // forward then backward substitution
    x.assign(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        double s = b[i];
        for (std::size_t k = 0; k < i; ++k) s -= A(i, k) * x[k];
        x[i] = s / A(i, i);
    }
    for (std::size_t i = n; i-- > 0;) {
        double s = x[i];
        for (std::size_t k = i + 1; k < n; ++k) s -= A(k, i) * x[k];
        x[i] = s / A(i, i);
    }
    return true;
}

struct LmmseEqualizer {
    int n_tap = 17;
    std::vector<double> taps;  // centered FIR, taps.size() == n_tap
    double bias = 0.0;
    std::array<double, 3> boundaries{-2.0, 0.0, 2.0};

    void validate() const {
        if (n_tap < 1 || n_tap % 2 == 0)
            throw std::invalid_argument("LmmseEqualizer: n_tap must be odd and positive");
        if (taps.size() != static_cast<std::size_t>(n_tap))
            throw std::invalid_argument("LmmseEqualizer: tap count mismatch");
        if (!(boundaries[0] <= boundaries[1] && boundaries[1] <= boundaries[2]))
            throw std::invalid_argument("LmmseEqualizer: boundaries must be sorted");
    }
};

// Least-squares fit of a symbol-spaced FIR plus constant offset against the
// transmitted amplitudes. Windows touching the sequence edges are excluded
// from the normal equations.
inline LmmseEqualizer fit_lmmse_taps(std::span<const double> y, std::span<const double> amps,
                                     int n_tap) {
    if (n_tap < 1 || n_tap % 2 == 0)
        throw std::invalid_argument("fit_lmmse_taps: n_tap must be odd and positive");
    if (y.size() != amps.size()) throw std::invalid_argument("fit_lmmse_taps: length mismatch");
    const std::size_t n = y.size();
    const int half = n_tap / 2;
    if (n < static_cast<std::size_t>(2 * n_tap))
        throw std::invalid_argument("fit_lmmse_taps: too few symbols");

    const std::size_t dim = static_cast<std::size_t>(n_tap) + 1;
    Matrix R(dim, dim);
    std::vector<double> p(dim, 0.0), x(dim, 0.0);
    std::size_t count = 0;
    for (std::size_t t = static_cast<std::size_t>(half); t + static_cast<std::size_t>(half) < n; ++t) {
        for (int i = 0; i < n_tap; ++i) x[static_cast<std::size_t>(i)] = y[t + static_cast<std::size_t>(i - half)];
        x[dim - 1] = 1.0;
        for (std::size_t a = 0; a < dim; ++a) {
            for (std::size_t b = a; b < dim; ++b) R(a, b) += x[a] * x[b];
            p[a] += x[a] * amps[t];
        }
        ++count;
    }
    for (std::size_t a = 0; a < dim; ++a)
        for (std::size_t b = 0; b < a; ++b) R(a, b) = R(b, a);
    const double inv = 1.0 / double(count);
    for (auto& v : R.a) v *= inv;
    for (auto& v : p) v *= inv;

    std::vector<double> w;
    Matrix A = R;
    std::vector<double> rhs = p;
    if (!cholesky_solve(A, rhs, w)) {
        std::fprintf(stderr, "fit_lmmse_taps: normal equations not positive definite, adding ridge\n");
        double tr = 0.0;
        for (std::size_t a = 0; a < dim; ++a) tr += R(a, a);
        const double ridge = 1e-8 * (1.0 + tr / double(dim));
        A = R;
        for (std::size_t a = 0; a < dim; ++a) A(a, a) += ridge;
        rhs = p;
        if (!cholesky_solve(A, rhs, w))
            throw std::runtime_error("fit_lmmse_taps: normal equations singular even with ridge");
    }

    LmmseEqualizer eq;
    eq.n_tap = n_tap;
    eq.taps.assign(w.begin(), w.begin() + n_tap);
    eq.bias = w[dim - 1];
    return eq;
}

// FIR output at every symbol; windows are clamped at the edges so the result
// has the same length as the input.
inline std::vector<double> equalize(const LmmseEqualizer& eq, std::span<const double> y) {
    eq.validate();
    const std::size_t n = y.size();
    const int half = eq.n_tap / 2;
    std::vector<double> z(n, 0.0);
    for (std::size_t t = 0; t < n; ++t) {
        double acc = eq.bias;
        for (int i = 0; i < eq.n_tap; ++i) {
            long idx = static_cast<long>(t) + i - half;
            idx = std::clamp(idx, 0L, static_cast<long>(n) - 1);
            acc += eq.taps[static_cast<std::size_t>(i)] * y[static_cast<std::size_t>(idx)];
        }
        z[t] = acc;
    }
    return z;
}

// Slicer boundaries minimizing total bit errors: coordinate descent where
// each pass scans every achievable split of the sorted samples between the
// two neighboring boundaries. Cost differences are O(1) per candidate via
// prefix sums, so a pass is linear after the initial sort.
inline std::array<double, 3> optimize_boundaries(std::span<const double> z,
                                                 std::span<const BitPair> bits) {
    if (z.size() != bits.size()) throw std::invalid_argument("optimize_boundaries: length mismatch");
    const std::size_t n = z.size();
    if (n == 0) throw std::invalid_argument("optimize_boundaries: empty input");

    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return z[a] < z[b]; });
    std::vector<double> zs(n);
    std::vector<BitPair> bs(n);
    std::array<bool, 4> seen{};
    for (std::size_t i = 0; i < n; ++i) {
        zs[i] = z[idx[i]];
        bs[i] = bits[idx[i]];
        seen[static_cast<std::size_t>(class_for_bits(bs[i]))] = true;
    }
    int n_classes = 0;
    for (bool s : seen) n_classes += s ? 1 : 0;
    if (n_classes < 2)
        throw std::invalid_argument("optimize_boundaries: need samples from at least two classes");

    std::array<double, 3> b{-2.0, 0.0, 2.0};
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> below(n + 1), above(n + 1);
    for (int pass = 0; pass < 32; ++pass) {
        bool changed = false;
        for (int k = 0; k < 3; ++k) {
            const double lo = k == 0 ? -inf : b[static_cast<std::size_t>(k - 1)];
            const double hi = k == 2 ? inf : b[static_cast<std::size_t>(k + 1)];
            // samples whose sliced class depends on b[k]: z in [lo, hi)
            const std::size_t first = static_cast<std::size_t>(
                std::lower_bound(zs.begin(), zs.end(), lo) - zs.begin());
            const std::size_t last = static_cast<std::size_t>(
                std::lower_bound(zs.begin(), zs.end(), hi) - zs.begin());
            const std::size_t m = last - first;
            if (m == 0) continue;

            const BitPair low_bits = bits_for_class(k);
            const BitPair high_bits = bits_for_class(k + 1);
            below[0] = 0.0;
            for (std::size_t i = 0; i < m; ++i)
                below[i + 1] = below[i] + double(hamming2(low_bits, bs[first + i]));
            above[m] = 0.0;
            for (std::size_t i = m; i-- > 0;)
                above[i] = above[i + 1] + double(hamming2(high_bits, bs[first + i]));

            // split s: samples [first, first+s) -> class k, rest -> class k+1
            double best_cost = inf;
            std::size_t best_split = 0;
            for (std::size_t s = 0; s <= m; ++s) {
                if (s > 0 && s < m && !(zs[first + s - 1] < zs[first + s])) continue;
                const double cost = below[s] + above[s];
                if (cost < best_cost) {
                    best_cost = cost;
                    best_split = s;
                }
            }
            double cand;
            if (best_split == 0)
                cand = zs[first];
            else if (best_split == m)
                cand = std::isfinite(hi) ? 0.5 * (zs[first + m - 1] + hi)
                                         : zs[first + m - 1] + 1.0;
            else
                cand = 0.5 * (zs[first + best_split - 1] + zs[first + best_split]);
            cand = std::clamp(cand, std::isfinite(lo) ? lo : cand, std::isfinite(hi) ? hi : cand);

            // only move if strictly better than the current boundary
            const std::size_t cur_split = static_cast<std::size_t>(
                std::lower_bound(zs.begin() + static_cast<long>(first),
                                 zs.begin() + static_cast<long>(last), b[static_cast<std::size_t>(k)]) -
                (zs.begin() + static_cast<long>(first)));
            const double cur_cost = below[cur_split] + above[cur_split];
            if (best_cost < cur_cost) {
                b[static_cast<std::size_t>(k)] = cand;
                changed = true;
            }
        }
        if (!changed) break;
    }
    return b;
}

inline EvalCounts evaluate_sliced(std::span<const double> z, std::span<const BitPair> bits,
                                  const std::array<double, 3>& boundaries) {
    if (z.size() != bits.size()) throw std::invalid_argument("evaluate_sliced: length mismatch");
    EvalCounts c;
    c.n_symbols = z.size();
    for (std::size_t t = 0; t < z.size(); ++t) {
        const int cls = slice_class(z[t], boundaries);
        const int be = hamming2(bits_for_class(cls), bits[t]);
        c.bit_errors += static_cast<std::uint64_t>(be);
        c.symbol_errors += be ? 1 : 0;
    }
    return c;
}

// Taps from the amplitudes, boundaries from the resulting filter output.
inline LmmseEqualizer fit_lmmse(std::span<const double> y, std::span<const BitPair> bits,
                                int n_tap) {
    if (y.size() != bits.size()) throw std::invalid_argument("fit_lmmse: length mismatch");
    std::vector<double> amps(y.size());
    for (std::size_t t = 0; t < y.size(); ++t)
        amps[t] = amplitude_for_class(class_for_bits(bits[t]));
    LmmseEqualizer eq = fit_lmmse_taps(y, amps, n_tap);
    const std::vector<double> z = equalize(eq, y);
    eq.boundaries = optimize_boundaries(z, bits);
    return eq;
}

inline EvalCounts evaluate_lmmse(const LmmseEqualizer& eq, std::span<const double> y,
                                 std::span<const BitPair> bits) {
    const std::vector<double> z = equalize(eq, y);
    return evaluate_sliced(z, bits, eq.boundaries);
}

// ---------------------------------------------------------------------------
// Fully connected ReLU classifier over the same received windows.

struct AnnParams {
    std::vector<Matrix> w;               // w[l]: [n_l][n_{l-1}]
    std::vector<std::vector<double>> b;  // per-layer bias
    std::vector<double> feat_mean;       // per-tap standardization
    std::vector<double> feat_std;
    int n_tap = 17;

    std::size_t n_layers() const { return w.size(); }
    std::size_t n_out() const { return w.empty() ? 0 : w.back().rows; }

    void validate() const {
        if (w.empty() || w.size() != b.size()) throw std::invalid_argument("AnnParams: empty or ragged layers");
        if (n_tap < 1 || n_tap % 2 == 0) throw std::invalid_argument("AnnParams: n_tap must be odd and positive");
        if (w.front().cols != static_cast<std::size_t>(n_tap))
            throw std::invalid_argument("AnnParams: first layer does not match window");
        for (std::size_t l = 0; l < w.size(); ++l) {
            if (b[l].size() != w[l].rows) throw std::invalid_argument("AnnParams: bias shape mismatch");
            if (l > 0 && w[l].cols != w[l - 1].rows)
                throw std::invalid_argument("AnnParams: layer size mismatch");
        }
        if (feat_mean.size() != static_cast<std::size_t>(n_tap) || feat_std.size() != feat_mean.size())
            throw std::invalid_argument("AnnParams: standardization shape mismatch");
    }
};

inline AnnParams init_ann(int n_tap, const std::vector<int>& hidden, int n_out,
                          std::mt19937_64& rng) {
    if (n_tap < 1 || n_tap % 2 == 0) throw std::invalid_argument("init_ann: n_tap must be odd and positive");
    if (n_out < 1) throw std::invalid_argument("init_ann: n_out must be >= 1");
    AnnParams p;
    p.n_tap = n_tap;
    p.feat_mean.assign(static_cast<std::size_t>(n_tap), 0.0);
    p.feat_std.assign(static_cast<std::size_t>(n_tap), 1.0);
    std::size_t prev = static_cast<std::size_t>(n_tap);
    std::vector<std::size_t> sizes;
    for (int h : hidden) {
        if (h < 1) throw std::invalid_argument("init_ann: hidden sizes must be >= 1");
        sizes.push_back(static_cast<std::size_t>(h));
    }
    sizes.push_back(static_cast<std::size_t>(n_out));
    for (std::size_t sz : sizes) {
        Matrix wl(sz, prev);
        std::normal_distribution<double> d(0.0, 1.0 / std::sqrt(double(prev)));
        for (auto& v : wl.a) v = d(rng);
        p.w.push_back(std::move(wl));
        p.b.emplace_back(sz, 0.0);
        prev = sz;
    }
    return p;
}

// Standardized window around symbol t, clamped at the sequence edges.
inline void ann_window(std::span<const double> y, std::size_t t, const AnnParams& p,
                       std::vector<double>& x) {
    const int half = p.n_tap / 2;
    x.resize(static_cast<std::size_t>(p.n_tap));
    for (int i = 0; i < p.n_tap; ++i) {
        long idx = static_cast<long>(t) + i - half;
        idx = std::clamp(idx, 0L, static_cast<long>(y.size()) - 1);
        x[static_cast<std::size_t>(i)] =
            (y[static_cast<std::size_t>(idx)] - p.feat_mean[static_cast<std::size_t>(i)]) /
            p.feat_std[static_cast<std::size_t>(i)];
    }
}

struct AnnTrace {
    std::vector<std::vector<double>> act;  // act[0] = input, act[l] = post-ReLU / logits
};

inline void ann_forward(const AnnParams& p, const std::vector<double>& x, AnnTrace& tr) {
    const std::size_t L = p.n_layers();
    tr.act.resize(L + 1);
    tr.act[0] = x;
    for (std::size_t l = 0; l < L; ++l) {
        const Matrix& wl = p.w[l];
        const std::vector<double>& in = tr.act[l];
        std::vector<double>& out = tr.act[l + 1];
        out.assign(wl.rows, 0.0);
        for (std::size_t r = 0; r < wl.rows; ++r) {
            double acc = p.b[l][r];
            const double* wr = wl.row(r);
            for (std::size_t c = 0; c < wl.cols; ++c) acc += wr[c] * in[c];
            out[r] = (l + 1 < L) ? std::max(0.0, acc) : acc;  // logits stay linear
        }
    }
}

inline std::vector<double> ann_logits(const AnnParams& p, const std::vector<double>& x) {
    AnnTrace tr;
    ann_forward(p, x, tr);
    return tr.act.back();
}

struct AnnGradients {
    std::vector<Matrix> w;
    std::vector<std::vector<double>> b;

    void accumulate(const AnnGradients& o) {
        for (std::size_t l = 0; l < w.size(); ++l) {
            for (std::size_t i = 0; i < w[l].a.size(); ++i) w[l].a[i] += o.w[l].a[i];
            for (std::size_t i = 0; i < b[l].size(); ++i) b[l][i] += o.b[l][i];
        }
    }
    void scale(double s) {
        for (auto& m : w)
            for (auto& v : m.a) v *= s;
        for (auto& bv : b)
            for (auto& v : bv) v *= s;
    }
};

inline AnnGradients ann_backward(const AnnParams& p, const AnnTrace& tr,
                                 const std::vector<double>& grad_logits) {
    const std::size_t L = p.n_layers();
    AnnGradients g;
    g.w.reserve(L);
    g.b.reserve(L);
    for (std::size_t l = 0; l < L; ++l) {
        g.w.emplace_back(p.w[l].rows, p.w[l].cols);
        g.b.emplace_back(p.w[l].rows, 0.0);
    }
    std::vector<double> delta = grad_logits;
    for (std::size_t l = L; l-- > 0;) {
        const std::vector<double>& in = tr.act[l];
        for (std::size_t r = 0; r < p.w[l].rows; ++r) {
            const double d = delta[r];
            g.b[l][r] = d;
            double* gr = g.w[l].row(r);
            for (std::size_t c = 0; c < p.w[l].cols; ++c) gr[c] = d * in[c];
        }
        if (l == 0) break;
        std::vector<double> prev(p.w[l].cols, 0.0);
        for (std::size_t r = 0; r < p.w[l].rows; ++r) {
            const double d = delta[r];
            const double* wr = p.w[l].row(r);
            for (std::size_t c = 0; c < p.w[l].cols; ++c) prev[c] += d * wr[c];
        }
        // ReLU gate: activations of layer l are zero exactly where clipped
        for (std::size_t c = 0; c < prev.size(); ++c)
            if (tr.act[l][c] <= 0.0) prev[c] = 0.0;
        delta = std::move(prev);
    }
    return g;
}

inline int argmax_class(const std::vector<double>& logits) {
    int best = 0;
    for (std::size_t k = 1; k < logits.size(); ++k)
        if (logits[k] > logits[static_cast<std::size_t>(best)]) best = static_cast<int>(k);
    return best;
}

inline EvalCounts evaluate_ann(const AnnParams& p, std::span<const double> y,
                               std::span<const BitPair> bits, int workers = 0,
                               std::size_t begin = 0, std::size_t end = SIZE_MAX) {
    p.validate();
    if (y.size() != bits.size()) throw std::invalid_argument("evaluate_ann: length mismatch");
    end = std::min(end, y.size());
    if (begin > end) throw std::invalid_argument("evaluate_ann: bad range");
    const std::size_t n = end - begin;
    std::vector<unsigned char> biterr(n, 0);
    parallel_for(n, workers ? workers : default_workers(), [&](std::size_t i) {
        std::vector<double> x;
        ann_window(y, begin + i, p, x);
        const std::vector<double> logits = ann_logits(p, x);
        const int cls = argmax_class(logits);
        biterr[i] = static_cast<unsigned char>(hamming2(bits_for_class(cls), bits[begin + i]));
    });
    EvalCounts c;
    c.n_symbols = n;
    for (std::size_t i = 0; i < n; ++i) {
        c.bit_errors += biterr[i];
        c.symbol_errors += biterr[i] ? 1 : 0;
    }
    return c;
}

struct AnnFitResult {
    AnnParams params;
    AnnParams final_params;
    std::vector<EpochLog> log;
    int best_epoch = -1;
    double best_val_ber = std::numeric_limits<double>::quiet_NaN();
};

// Same schedule and determinism contract as the spiking trainer: shuffled
// minibatches, per-slot gradients reduced in order, validation tail, best
// validation BER kept.
inline AnnFitResult fit_ann(std::span<const double> y, std::span<const BitPair> bits,
                            const std::vector<int>& hidden, int n_tap, const TrainConfig& cfg) {
    cfg.validate();
    if (y.size() != bits.size()) throw std::invalid_argument("fit_ann: length mismatch");
    const std::size_t n = y.size();
    const std::size_t n_val = static_cast<std::size_t>(std::llround(cfg.val_fraction * double(n)));
    const std::size_t n_train = n - n_val;
    if (n_train == 0) throw std::invalid_argument("fit_ann: no training samples after split");
    const int workers = cfg.workers ? cfg.workers : default_workers();

    std::mt19937_64 init_rng(derive_seed(cfg.rng_seed, 0x2001));
    AnnParams cur = init_ann(n_tap, hidden, 4, init_rng);

    // standardization from the training portion only
    {
        const int half = cur.n_tap / 2;
        for (int i = 0; i < cur.n_tap; ++i) {
            double s = 0.0, s2 = 0.0;
            for (std::size_t t = 0; t < n_train; ++t) {
                long idx = static_cast<long>(t) + i - half;
                idx = std::clamp(idx, 0L, static_cast<long>(n) - 1);
                const double v = y[static_cast<std::size_t>(idx)];
                s += v;
                s2 += v * v;
            }
            const double mean = s / double(n_train);
            double var = s2 / double(n_train) - mean * mean;
            if (!(var > 1e-24)) var = 1.0;
            cur.feat_mean[static_cast<std::size_t>(i)] = mean;
            cur.feat_std[static_cast<std::size_t>(i)] = std::sqrt(var);
        }
    }
    cur.validate();

    std::vector<AdamState> st_w, st_b;
    for (std::size_t l = 0; l < cur.n_layers(); ++l) {
        st_w.emplace_back(cur.w[l].a.size());
        st_b.emplace_back(cur.b[l].size());
    }
    int adam_t = 0;

    std::vector<std::size_t> order(n_train);
    std::iota(order.begin(), order.end(), std::size_t{0});
    const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);
    std::vector<AnnGradients> slot(bs);
    std::vector<double> slot_loss(bs);

    AnnFitResult res;
    res.params = cur;
    double best_ber = std::numeric_limits<double>::infinity();
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::mt19937_64 shuffle_rng(derive_seed(cfg.rng_seed, 0x2002, static_cast<std::uint64_t>(epoch)));
        std::shuffle(order.begin(), order.end(), shuffle_rng);

        double loss_sum = 0.0;
        for (std::size_t base = 0; base < n_train; base += bs) {
            const std::size_t b = std::min(bs, n_train - base);
            parallel_for(b, workers, [&](std::size_t i) {
                const std::size_t sample = order[base + i];
                std::vector<double> x;
                ann_window(y, sample, cur, x);
                AnnTrace tr;
                ann_forward(cur, x, tr);
                const int label = class_for_bits(bits[sample]);
                const LossResult loss = softmax_ce(tr.act.back(), label);
                slot[i] = ann_backward(cur, tr, loss.grad_m);
                slot_loss[i] = loss.value;
            });
            AnnGradients sum = std::move(slot[0]);
            double batch_loss = slot_loss[0];
            for (std::size_t i = 1; i < b; ++i) {
                sum.accumulate(slot[i]);
                batch_loss += slot_loss[i];
            }
            sum.scale(1.0 / double(b));
            batch_loss /= double(b);
            if (!std::isfinite(batch_loss))
                throw std::runtime_error("fit_ann: loss diverged at epoch " + std::to_string(epoch) +
                                         ", batch " + std::to_string(base / bs));
            loss_sum += batch_loss * double(b);
            ++adam_t;
            for (std::size_t l = 0; l < cur.n_layers(); ++l) {
                adam_step(cur.w[l], sum.w[l], st_w[l], adam_t, cfg);
                adam_step(std::span<double>(cur.b[l]), std::span<const double>(sum.b[l]), st_b[l],
                          adam_t, cfg);
            }
        }

        EpochLog log;
        log.epoch = epoch;
        log.train_loss = loss_sum / double(n_train);
        if (n_val > 0) {
            const EvalCounts val = evaluate_ann(cur, y, bits, workers, n_train, n);
            log.val_ser = val.ser();
            log.val_ber = val.ber();
            // ties keep the later snapshot, matching the spiking fitter
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
