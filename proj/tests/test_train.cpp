#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstring>
#include <random>
#include <vector>

#include "spikeq/encoder.hpp"
#include "spikeq/snn.hpp"
#include "spikeq/train.hpp"

using namespace spikeq;

TEST_CASE("surrogate derivative peaks at the threshold") {
    CHECK(surrogate_grad(1.0, 1.0, 10.0) == 1.0);
    CHECK(surrogate_grad(1.1, 1.0, 10.0) == Catch::Approx(0.25).epsilon(1e-12));
    CHECK(surrogate_grad(0.9, 1.0, 10.0) == Catch::Approx(0.25).epsilon(1e-12));
    CHECK(surrogate_grad(0.3, 1.0, 10.0) == surrogate_grad(1.7, 1.0, 10.0));
    CHECK(surrogate_grad(5.0, 1.0, 10.0) < 1e-3);
}

TEST_CASE("smoothed spike matches the surrogate as its derivative") {
    CHECK(smoothed_spike(1.0, 1.0, 10.0) == 0.5);
    const double h = 1e-6;
    for (double v : {0.4, 0.95, 1.0 + 1e-7, 1.3, 2.5}) {
        const double fd =
            (smoothed_spike(v + h, 1.0, 10.0) - smoothed_spike(v - h, 1.0, 10.0)) / (2.0 * h);
        CHECK(fd == Catch::Approx(surrogate_grad(v, 1.0, 10.0)).epsilon(1e-4));
    }
    // monotone and bounded
    double prev = smoothed_spike(-10.0, 1.0, 10.0);
    for (double v = -9.9; v < 10.0; v += 0.1) {
        const double cur = smoothed_spike(v, 1.0, 10.0);
        CHECK(cur >= prev);
        prev = cur;
    }
    CHECK(smoothed_spike(-1e9, 1.0, 10.0) > -0.51);
    CHECK(smoothed_spike(1e9, 1.0, 10.0) < 1.51);
}

TEST_CASE("softmax cross entropy basics") {
    const LossResult confident = softmax_ce({10.0, 0.0, 0.0, 0.0}, 0);
    CHECK(confident.value < 1e-3);
    CHECK(confident.prob[0] > 0.999);

    const LossResult uniform = softmax_ce({0.7, 0.7, 0.7, 0.7}, 2);
    CHECK(uniform.value == Catch::Approx(std::log(4.0)).epsilon(1e-12));
    for (double p : uniform.prob) CHECK(p == Catch::Approx(0.25).epsilon(1e-12));

    const LossResult base = softmax_ce({0.3, -0.2, 1.1, 0.0}, 1);
    const LossResult shifted = softmax_ce({100.3, 99.8, 101.1, 100.0}, 1);
    CHECK(shifted.value == Catch::Approx(base.value).epsilon(1e-9));
    for (int k = 0; k < 4; ++k) {
        CHECK(shifted.prob[std::size_t(k)] == Catch::Approx(base.prob[std::size_t(k)]).epsilon(1e-9));
        CHECK(shifted.grad_m[std::size_t(k)] ==
              Catch::Approx(base.grad_m[std::size_t(k)]).margin(1e-9));
    }
    // gradient sums to zero
    double s = 0.0;
    for (double g : base.grad_m) s += g;
    CHECK(std::abs(s) < 1e-15);

    CHECK_THROWS_AS(softmax_ce({1.0, 2.0}, 5), std::invalid_argument);
}

TEST_CASE("readout weight gradient matches finite differences exactly") {
    // spike-free path: the readout stack is linear, so BPTT must agree with
    // central differences to first order in h
    std::mt19937_64 rng(101);
    const std::size_t T = 20, H = 6, O = 3;
    Matrix spikes(T, H);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (auto& s : spikes.a) s = u(rng) < 0.3 ? 1.0 : 0.0;
    Matrix w(O, H);
    std::normal_distribution<double> d(0.0, 0.5);
    for (auto& v : w.a) v = d(rng);
    const NeuronParams li;
    const double dt = 1.0;
    const int label = 1;

    auto loss_of = [&](const Matrix& wm) {
        const ReadoutTrace tr = integrate_readout(spikes, wm, li, dt);
        return softmax_ce(readout_maxima(tr.v_o).value, label).value;
    };

    const ReadoutTrace tr = integrate_readout(spikes, w, li, dt);
    const ReadoutMax mx = readout_maxima(tr.v_o);
    const LossResult loss = softmax_ce(mx.value, label);
    const LifCoeffs co = LifCoeffs::from(li, dt);
    const ReadoutBackward rb = backward_readout(spikes, w, co, loss.grad_m, mx.at_step);

    const double h = 1e-6;
    double worst = 0.0;
    for (std::size_t i = 0; i < w.a.size(); ++i) {
        Matrix wp = w, wm = w;
        wp.a[i] += h;
        wm.a[i] -= h;
        const double fd = (loss_of(wp) - loss_of(wm)) / (2.0 * h);
        worst = std::max(worst, std::abs(fd - rb.gw.a[i]));
    }
    CHECK(worst < 1e-6);
}

TEST_CASE("full network gradient matches finite differences in smoothed mode") {
    std::mt19937_64 rng(202);
    const std::size_t n_in = 20, H = 5;
    SnnParams p;
    p.w_ih = Matrix(H, n_in);
    p.w_ho = Matrix(4, H);
    p.n_steps = 15;
    std::normal_distribution<double> d(0.0, 0.6);
    for (auto& v : p.w_ih.a) v = d(rng);
    for (auto& v : p.w_ho.a) v = d(rng);

    SpikeRaster r;
    r.n_tap = int(n_in);
    r.neurons_per_sample = 1;
    r.step.resize(n_in);
    std::uniform_int_distribution<int> step_d(0, 12);
    for (auto& s : r.step) s = static_cast<std::int16_t>(step_d(rng));

    const double beta_s = 10.0;
    const int label = 3;
    auto loss_of = [&](const SnnParams& q) {
        const SnnTrace tr = forward(r, q, SpikeModel::smoothed, beta_s);
        return loss_from_maxima(readout_maxima(tr), label).value;
    };

    const SnnTrace tr = forward(r, p, SpikeModel::smoothed, beta_s);
    const ReadoutMax mx = readout_maxima(tr);
    const LossResult loss = loss_from_maxima(mx, label);
    const Gradients g = backward(r, tr, p, loss.grad_m, mx.at_step, beta_s);

    const double h = 1e-5;
    double worst = 0.0;
    auto check_block = [&](const Matrix& w, const Matrix& gw, bool input_side) {
        for (std::size_t i = 0; i < w.a.size(); ++i) {
            SnnParams q = p;
            Matrix& target = input_side ? q.w_ih : q.w_ho;
            target.a[i] = w.a[i] + h;
            const double up = loss_of(q);
            target.a[i] = w.a[i] - h;
            const double down = loss_of(q);
            const double fd = (up - down) / (2.0 * h);
            const double err = std::abs(fd - gw.a[i]) / std::max(1.0, std::abs(fd));
            worst = std::max(worst, err);
        }
    };
    check_block(p.w_ho, g.w_ho, false);
    check_block(p.w_ih, g.w_ih, true);
    INFO("worst relative error " << worst);
    CHECK(worst < 1e-4);
}

TEST_CASE("loss gradient routes through the peak step with softmax weights") {
    // identical readout rows force identical peaks, so the weight gradient
    // rows must be proportional to grad_m: non-label rows equal, label row
    // exactly -3x of them
    std::mt19937_64 rng(303);
    SnnParams p;
    p.w_ih = Matrix(8, 12);
    p.w_ho = Matrix(4, 8);
    p.hidden.threshold = 0.3;
    p.n_steps = 30;
    std::normal_distribution<double> d(0.0, 0.7);
    for (auto& v : p.w_ih.a) v = std::abs(d(rng));
    std::vector<double> shared(8);
    for (auto& v : shared) v = std::abs(d(rng)) + 0.1;
    for (std::size_t k = 0; k < 4; ++k)
        for (std::size_t j = 0; j < 8; ++j) p.w_ho(k, j) = shared[j];

    SpikeRaster r;
    r.n_tap = 12;
    r.neurons_per_sample = 1;
    r.step = {0, 1, 1, 2, 3, 3, 4, 5, 5, 6, 7, 8};

    const SnnTrace tr = forward(r, p);
    double spike_count = 0.0;
    for (double s : tr.spikes.a) spike_count += s;
    REQUIRE(spike_count > 0.0);

    const ReadoutMax mx = readout_maxima(tr);
    const int label = 2;
    const LossResult loss = loss_from_maxima(mx, label);
    for (double pk : loss.prob) CHECK(pk == Catch::Approx(0.25).epsilon(1e-12));

    const Gradients g = backward(r, tr, p, loss.grad_m, mx.at_step, 10.0);
    double norm0 = 0.0;
    for (std::size_t j = 0; j < 8; ++j) norm0 += std::abs(g.w_ho(0, j));
    REQUIRE(norm0 > 1e-9);
    for (std::size_t j = 0; j < 8; ++j) {
        CHECK(g.w_ho(1, j) == Catch::Approx(g.w_ho(0, j)).margin(1e-12));
        CHECK(g.w_ho(3, j) == Catch::Approx(g.w_ho(0, j)).margin(1e-12));
        CHECK(g.w_ho(2, j) == Catch::Approx(-3.0 * g.w_ho(0, j)).margin(1e-12));
    }
}

TEST_CASE("adam fixed points and sign behavior") {
    TrainConfig cfg;
    cfg.lr = 0.01;

    Matrix w(1, 3);
    w.a = {1.0, -2.0, 0.5};
    Matrix g(1, 3);
    AdamState st(3);
    const Matrix before = w;
    for (int t = 1; t <= 5; ++t) adam_step(w, g, st, t, cfg);
    for (std::size_t i = 0; i < 3; ++i) CHECK(w.a[i] == before.a[i]);

    // beta1 = beta2 = 0 with tiny eps reduces to sign descent
    TrainConfig sign_cfg;
    sign_cfg.lr = 0.01;
    sign_cfg.beta1 = 0.0;
    sign_cfg.beta2 = 0.0;
    sign_cfg.eps = 0.0;
    Matrix w2(1, 3);
    w2.a = {1.0, 1.0, 1.0};
    Matrix g2(1, 3);
    g2.a = {0.4, -7.0, 1e-3};
    AdamState st2(3);
    adam_step(w2, g2, st2, 1, sign_cfg);
    CHECK(w2.a[0] == Catch::Approx(1.0 - 0.01).epsilon(1e-12));
    CHECK(w2.a[1] == Catch::Approx(1.0 + 0.01).epsilon(1e-12));
    CHECK(w2.a[2] == Catch::Approx(1.0 - 0.01).epsilon(1e-12));

    AdamState st3(3);
    CHECK_THROWS_AS(adam_step(w2, g2, st3, 0, sign_cfg), std::invalid_argument);
}

namespace {

struct ToyProblem {
    EncodedStream stream;
    std::vector<BitPair> bits;
    EncoderConfig enc;
    int n_tap = 1;
};

// four noisy amplitude clusters, one per class; a single-tap window keeps
// neighboring symbols out of the window, and amp spans the whole data range
// so the distance fold |A - |y - ref|| stays monotone and the encoding is
// injective, making the problem exactly separable
ToyProblem make_toy(std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> cls(0, 3);
    std::uniform_real_distribution<double> jitter(-0.2, 0.2);
    ToyProblem toy;
    std::vector<double> y(n);
    toy.bits.resize(n);
    for (std::size_t t = 0; t < n; ++t) {
        const int k = cls(rng);
        toy.bits[t] = bits_for_class(k);
        y[t] = amplitude_for_class(k) + jitter(rng);
    }
    toy.enc.n_tap = toy.n_tap;
    toy.enc.neurons_per_sample = 6;
    toy.enc.refs = {-3.4, -2.04, -0.68, 0.68, 2.04, 3.4};
    toy.enc.amp = 6.8;
    toy.enc.beta = 0.68;
    toy.enc.t_max = 29.0;
    toy.enc.dt = 1.0;
    toy.enc.validate();
    toy.stream = encode_stream(y, toy.enc);
    return toy;
}

SnnParams toy_init(const ToyProblem& toy, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    return init_snn(std::size_t(toy.n_tap) * 6, 16, 4, NeuronParams{}, NeuronParams{}, 30, 1.0,
                    rng);
}

}  // namespace

TEST_CASE("training solves a separable four-cluster problem") {
    const ToyProblem toy = make_toy(800, 42);
    const SnnParams init = toy_init(toy, 1);

    TrainConfig cfg;
    cfg.lr = 1e-2;
    cfg.batch_size = 64;
    cfg.epochs = 30;
    cfg.val_fraction = 0.1;
    cfg.rng_seed = 7;
    cfg.workers = 1;

    const FitResult fit = fit_snn(toy.stream, toy.bits, init, toy.n_tap, cfg);
    REQUIRE(fit.log.size() == 30);
    CHECK(fit.log.back().train_loss < fit.log.front().train_loss);

    const EvalCounts counts = evaluate_snn(toy.stream, toy.bits, fit.params, toy.n_tap, 1);
    const double acc = 1.0 - counts.ser();
    INFO("accuracy " << acc << " val BER " << fit.best_val_ber);
    CHECK(acc > 0.99);
}

TEST_CASE("zero epochs returns the initial weights untouched") {
    const ToyProblem toy = make_toy(100, 43);
    const SnnParams init = toy_init(toy, 2);
    TrainConfig cfg;
    cfg.epochs = 0;
    const FitResult fit = fit_snn(toy.stream, toy.bits, init, toy.n_tap, cfg);
    CHECK(fit.log.empty());
    REQUIRE(fit.params.w_ih.a.size() == init.w_ih.a.size());
    for (std::size_t i = 0; i < init.w_ih.a.size(); ++i)
        CHECK(fit.params.w_ih.a[i] == init.w_ih.a[i]);
    for (std::size_t i = 0; i < init.w_ho.a.size(); ++i)
        CHECK(fit.params.w_ho.a[i] == init.w_ho.a[i]);
}

TEST_CASE("training is bit-reproducible and worker-count independent") {
    const ToyProblem toy = make_toy(300, 44);
    const SnnParams init = toy_init(toy, 3);
    TrainConfig cfg;
    cfg.lr = 2e-3;
    cfg.batch_size = 32;
    cfg.epochs = 3;
    cfg.rng_seed = 99;

    TrainConfig cfg1 = cfg;
    cfg1.workers = 1;
    TrainConfig cfg2 = cfg;
    cfg2.workers = 2;
    TrainConfig cfg4 = cfg;
    cfg4.workers = 4;

    const FitResult a = fit_snn(toy.stream, toy.bits, init, toy.n_tap, cfg1);
    const FitResult b = fit_snn(toy.stream, toy.bits, init, toy.n_tap, cfg1);
    const FitResult c = fit_snn(toy.stream, toy.bits, init, toy.n_tap, cfg2);
    const FitResult e = fit_snn(toy.stream, toy.bits, init, toy.n_tap, cfg4);

    REQUIRE(std::memcmp(a.final_params.w_ih.a.data(), b.final_params.w_ih.a.data(),
                        a.final_params.w_ih.a.size() * sizeof(double)) == 0);
    REQUIRE(std::memcmp(a.final_params.w_ih.a.data(), c.final_params.w_ih.a.data(),
                        a.final_params.w_ih.a.size() * sizeof(double)) == 0);
    REQUIRE(std::memcmp(a.final_params.w_ih.a.data(), e.final_params.w_ih.a.data(),
                        a.final_params.w_ih.a.size() * sizeof(double)) == 0);
    REQUIRE(std::memcmp(a.final_params.w_ho.a.data(), e.final_params.w_ho.a.data(),
                        a.final_params.w_ho.a.size() * sizeof(double)) == 0);
    for (std::size_t i = 0; i < a.log.size(); ++i) {
        CHECK(a.log[i].train_loss == c.log[i].train_loss);
        CHECK(a.log[i].val_ber == e.log[i].val_ber);
    }
}

TEST_CASE("non-finite state raises instead of silently producing garbage") {
    // spikes are binary, so a runaway learning rate only grows the loss
    // linearly; the guards exist for non-finite states, which must surface
    // as an error rather than train through
    const ToyProblem toy = make_toy(200, 45);
    SnnParams init = toy_init(toy, 4);
    for (auto& v : init.w_ih.a) v = std::abs(v) * 50.0;  // force hidden spikes
    for (auto& v : init.w_ho.a) v = std::numeric_limits<double>::max();
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 32;
    CHECK_THROWS_AS(fit_snn(toy.stream, toy.bits, init, toy.n_tap, cfg), std::runtime_error);
}
