#include <catch2/catch_amalgamated.hpp>

#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <random>
#include <string>

#include "spikeq/io.hpp"

using namespace spikeq;

namespace {

// unique per-process scratch dir so parallel test runs do not collide
std::string scratch_path(const std::string& name) {
    static const std::string dir = [] {
        auto d = std::filesystem::temp_directory_path() /
                 ("spikeq-test-" + std::to_string(::getpid()));
        std::filesystem::create_directories(d);
        return d.string();
    }();
    return dir + "/" + name;
}

}  // namespace

TEST_CASE("dataset round trips without losing a bit") {
    LinkConfig cfg;
    cfg.noise_sigma2 = 0.02;
    cfg.rng_seed = 77;
    cfg.fiber_length = 2000.0;
    const Dataset ds = make_dataset(500, cfg);
    REQUIRE(ds.size() == 500);
    REQUIRE(ds.pd_signal_var > 0.0);

    const std::string path = scratch_path("ds.csv");
    save_dataset(ds, path);
    REQUIRE(std::filesystem::exists(path));
    REQUIRE(std::filesystem::exists(dataset_meta_path(path)));

    const Dataset back = load_dataset(path);
    REQUIRE(back.size() == ds.size());
    CHECK(back.pd_signal_var == ds.pd_signal_var);
    for (std::size_t t = 0; t < ds.size(); ++t) {
        CHECK(back.frame.bits[t] == ds.frame.bits[t]);
        CHECK(back.frame.amplitudes[t] == ds.frame.amplitudes[t]);
        CHECK(back.y[t] == ds.y[t]);
    }
    CHECK(back.cfg.noise_sigma2 == cfg.noise_sigma2);
    CHECK(back.cfg.rng_seed == cfg.rng_seed);
    CHECK(back.cfg.fiber_length == cfg.fiber_length);
    CHECK(back.cfg.baud_rate == cfg.baud_rate);
    CHECK(back.cfg.rrc_rolloff == cfg.rrc_rolloff);
}

TEST_CASE("dataset loading requires the sidecar") {
    LinkConfig cfg;
    const Dataset ds = make_dataset(50, cfg);
    const std::string path = scratch_path("orphan.csv");
    save_dataset(ds, path);
    std::filesystem::remove(dataset_meta_path(path));
    CHECK_THROWS_AS(load_dataset(path), std::runtime_error);
}

TEST_CASE("spiking checkpoint restores weights and encoder exactly") {
    std::mt19937_64 rng(5);
    SnnParams p = init_snn(30, 8, 4, NeuronParams{}, NeuronParams{}, 30, 1.0, rng);
    p.hidden.tau_m = 9.5;
    p.readout.tau_syn = 4.25;

    EncoderConfig enc;
    enc.n_tap = 3;
    enc.neurons_per_sample = 5;
    enc.refs = {-2.0, -1.0, 0.5, 1.0, 2.5};
    enc.amp = 3.0;
    enc.beta = 0.25;
    enc.t_max = 29.0;
    enc.dt = 1.0;
    enc.kappa = 0.5;

    const std::string path = scratch_path("snn.json");
    save_snn(path, p, enc);
    CHECK(checkpoint_model(path) == "snn");

    const auto [q, enc2] = load_snn(path);
    REQUIRE(q.w_ih.rows == p.w_ih.rows);
    REQUIRE(q.w_ih.cols == p.w_ih.cols);
    for (std::size_t i = 0; i < p.w_ih.a.size(); ++i) CHECK(q.w_ih.a[i] == p.w_ih.a[i]);
    for (std::size_t i = 0; i < p.w_ho.a.size(); ++i) CHECK(q.w_ho.a[i] == p.w_ho.a[i]);
    CHECK(q.hidden.tau_m == p.hidden.tau_m);
    CHECK(q.readout.tau_syn == p.readout.tau_syn);
    CHECK(q.n_steps == p.n_steps);
    CHECK(q.dt == p.dt);
    REQUIRE(enc2.refs.size() == enc.refs.size());
    for (std::size_t i = 0; i < enc.refs.size(); ++i) CHECK(enc2.refs[i] == enc.refs[i]);
    CHECK(enc2.amp == enc.amp);
    CHECK(enc2.beta == enc.beta);
    CHECK(enc2.n_tap == enc.n_tap);
}

TEST_CASE("dense checkpoint restores layers and standardization exactly") {
    std::mt19937_64 rng(9);
    AnnParams p = init_ann(17, {34, 10}, 4, rng);
    std::normal_distribution<double> d(0.0, 1.0);
    for (auto& m : p.feat_mean) m = d(rng);
    for (auto& s : p.feat_std) s = std::abs(d(rng)) + 0.1;
    for (auto& bv : p.b)
        for (auto& v : bv) v = d(rng);

    const std::string path = scratch_path("ann.json");
    save_ann(path, p);
    CHECK(checkpoint_model(path) == "ann");

    const AnnParams q = load_ann(path);
    REQUIRE(q.n_layers() == p.n_layers());
    CHECK(q.n_tap == p.n_tap);
    for (std::size_t l = 0; l < p.n_layers(); ++l) {
        REQUIRE(q.w[l].rows == p.w[l].rows);
        for (std::size_t i = 0; i < p.w[l].a.size(); ++i) CHECK(q.w[l].a[i] == p.w[l].a[i]);
        for (std::size_t i = 0; i < p.b[l].size(); ++i) CHECK(q.b[l][i] == p.b[l][i]);
    }
    for (std::size_t i = 0; i < p.feat_mean.size(); ++i) {
        CHECK(q.feat_mean[i] == p.feat_mean[i]);
        CHECK(q.feat_std[i] == p.feat_std[i]);
    }
}

TEST_CASE("linear checkpoint restores taps and boundaries exactly") {
    LmmseEqualizer eq;
    eq.n_tap = 17;
    eq.taps.resize(17);
    std::mt19937_64 rng(13);
    std::normal_distribution<double> d(0.0, 0.3);
    for (auto& t : eq.taps) t = d(rng);
    eq.bias = -0.1234567890123456789;
    eq.boundaries = {-1.9, 0.05, 2.2};

    const std::string path = scratch_path("lmmse.json");
    save_lmmse(path, eq);
    CHECK(checkpoint_model(path) == "lmmse");

    const LmmseEqualizer back = load_lmmse(path);
    REQUIRE(back.taps.size() == eq.taps.size());
    for (std::size_t i = 0; i < eq.taps.size(); ++i) CHECK(back.taps[i] == eq.taps[i]);
    CHECK(back.bias == eq.bias);
    for (int k = 0; k < 3; ++k)
        CHECK(back.boundaries[std::size_t(k)] == eq.boundaries[std::size_t(k)]);
}

TEST_CASE("loaders reject mismatched checkpoint kinds") {
    LmmseEqualizer eq;
    eq.taps.assign(17, 0.0);
    eq.taps[8] = 1.0;
    const std::string path = scratch_path("kind.json");
    save_lmmse(path, eq);
    CHECK_THROWS_AS(load_snn(path), std::runtime_error);
    CHECK_THROWS_AS(load_ann(path), std::runtime_error);

    io_detail::atomic_write(scratch_path("junk.json"), "{\"format\":\"other\"}");
    CHECK_THROWS_AS(load_checkpoint_json(scratch_path("junk.json")), std::runtime_error);
    CHECK_THROWS_AS(load_checkpoint_json(scratch_path("missing.json")), std::runtime_error);
}

TEST_CASE("training log lands one record per line") {
    std::vector<EpochLog> log = {{0, 1.25, 0.5, 0.25}, {1, 0.75, 0.25, 0.125}};
    const std::string path = scratch_path("log.jsonl");
    save_training_log(path, log);
    const std::string text = io_detail::read_file(path);
    std::size_t lines = 0;
    for (char c : text)
        if (c == '\n') ++lines;
    CHECK(lines == 2);
    const auto j = nlohmann::json::parse(text.substr(0, text.find('\n')));
    CHECK(j.at("epoch") == 0);
    CHECK(j.at("train_loss") == 1.25);
    CHECK(j.at("val_ber") == 0.25);
}
