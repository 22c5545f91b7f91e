#pragma once

#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "spikeq/baselines.hpp"
#include "spikeq/common.hpp"
#include "spikeq/encoder.hpp"
#include "spikeq/link.hpp"
#include "spikeq/snn.hpp"

// Serialization: symbol-level datasets as CSV with a JSON sidecar carrying
// the link settings, model checkpoints as self-describing JSON. All writes
// go through a temp file and rename so readers never observe a torn file.
// Doubles are printed with 17 significant digits and therefore round-trip
// bit-exactly.

namespace spikeq {

namespace io_detail {

inline void atomic_write(const std::string& path, const std::string& content) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot open for writing: " + tmp);
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        out.flush();
        if (!out) throw std::runtime_error("write failed: " + tmp);
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0)
        throw std::runtime_error("rename failed: " + tmp + " -> " + path);
}

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline nlohmann::json matrix_json(const Matrix& m) {
    return {{"rows", m.rows}, {"cols", m.cols}, {"data", m.a}};
}

inline Matrix matrix_from_json(const nlohmann::json& j) {
    Matrix m(j.at("rows").get<std::size_t>(), j.at("cols").get<std::size_t>());
    const auto data = j.at("data").get<std::vector<double>>();
    if (data.size() != m.a.size()) throw std::runtime_error("matrix data length mismatch");
    m.a = data;
    return m;
}

}  // namespace io_detail

struct Dataset {
    SymbolFrame frame;
    std::vector<double> y;  // received samples, symbol rate
    LinkConfig cfg;
    double pd_signal_var = 0.0;  // noiseless detector output variance

    std::size_t size() const { return y.size(); }
};

inline Dataset make_dataset(std::size_t n_symbols, const LinkConfig& cfg) {
    std::mt19937_64 rng(derive_seed(cfg.rng_seed, 0x11));
    const std::vector<BitPair> bits = random_bits(n_symbols, rng);
    LinkResult lr = simulate_link(bits, cfg);
    Dataset ds;
    ds.frame = std::move(lr.frame);
    ds.y = std::move(lr.y);
    ds.cfg = cfg;
    ds.pd_signal_var = lr.pd_signal_var;
    return ds;
}

inline nlohmann::json link_config_json(const LinkConfig& c) {
    return {{"baud_rate", c.baud_rate},
            {"wavelength", c.wavelength},
            {"dispersion_ps_nm_km", c.dispersion_ps_nm_km},
            {"fiber_length", c.fiber_length},
            {"oversampling", c.oversampling},
            {"rrc_rolloff", c.rrc_rolloff},
            {"rrc_span", c.rrc_span},
            {"amp_scale", c.amp_scale},
            {"bias", c.bias},
            {"noise_sigma2", c.noise_sigma2},
            {"rng_seed", c.rng_seed},
            {"guard_symbols", c.guard_symbols}};
}

inline LinkConfig link_config_from_json(const nlohmann::json& j) {
    LinkConfig c;
    c.baud_rate = j.at("baud_rate").get<double>();
    c.wavelength = j.at("wavelength").get<double>();
    c.dispersion_ps_nm_km = j.at("dispersion_ps_nm_km").get<double>();
    c.fiber_length = j.at("fiber_length").get<double>();
    c.oversampling = j.at("oversampling").get<int>();
    c.rrc_rolloff = j.at("rrc_rolloff").get<double>();
    c.rrc_span = j.at("rrc_span").get<int>();
    c.amp_scale = j.at("amp_scale").get<double>();
    c.bias = j.at("bias").get<double>();
    c.noise_sigma2 = j.at("noise_sigma2").get<double>();
    c.rng_seed = j.at("rng_seed").get<std::uint64_t>();
    c.guard_symbols = j.at("guard_symbols").get<int>();
    return c;
}

inline std::string dataset_meta_path(const std::string& csv_path) { return csv_path + ".meta.json"; }

inline void save_dataset(const Dataset& ds, const std::string& path) {
    std::string out;
    out.reserve(ds.size() * 48 + 64);
    out += "symbol_index,b1,b2,amplitude,y\n";
    char line[128];
    for (std::size_t t = 0; t < ds.size(); ++t) {
        std::snprintf(line, sizeof line, "%zu,%d,%d,%.17g,%.17g\n", t, int(ds.frame.bits[t].b1),
                      int(ds.frame.bits[t].b2), ds.frame.amplitudes[t], ds.y[t]);
        out += line;
    }
    io_detail::atomic_write(path, out);

    nlohmann::json meta = {{"format", "spikeq-dataset"},
                           {"version", 1},
                           {"n_symbols", ds.size()},
                           {"pd_signal_var", ds.pd_signal_var},
                           {"link", link_config_json(ds.cfg)}};
    io_detail::atomic_write(dataset_meta_path(path), meta.dump(2) + "\n");
}

inline Dataset load_dataset(const std::string& path) {
    const std::string meta_text = io_detail::read_file(dataset_meta_path(path));
    const nlohmann::json meta = nlohmann::json::parse(meta_text);
    if (meta.at("format").get<std::string>() != "spikeq-dataset")
        throw std::runtime_error("not a dataset sidecar: " + dataset_meta_path(path));

    Dataset ds;
    ds.cfg = link_config_from_json(meta.at("link"));
    ds.pd_signal_var = meta.at("pd_signal_var").get<double>();

    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open: " + path);
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("empty dataset: " + path);
    if (line != "symbol_index,b1,b2,amplitude,y")
        throw std::runtime_error("unexpected dataset header in " + path);
    const std::size_t n = meta.at("n_symbols").get<std::size_t>();
    ds.frame.bits.reserve(n);
    ds.frame.amplitudes.reserve(n);
    ds.y.reserve(n);
    std::size_t row = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::size_t idx;
        int b1, b2;
        double amp, yv;
        char amp_s[40], y_s[40];
        if (std::sscanf(line.c_str(), "%zu,%d,%d,%39[^,],%39s", &idx, &b1, &b2, amp_s, y_s) != 5)
            throw std::runtime_error("bad dataset row " + std::to_string(row) + " in " + path);
        amp = std::strtod(amp_s, nullptr);
        yv = std::strtod(y_s, nullptr);
        if (idx != row) throw std::runtime_error("non-contiguous symbol_index in " + path);
        ds.frame.bits.push_back(BitPair{static_cast<std::uint8_t>(b1), static_cast<std::uint8_t>(b2)});
        ds.frame.amplitudes.push_back(amp);
        ds.y.push_back(yv);
        ++row;
    }
    if (row != n) throw std::runtime_error("dataset row count does not match sidecar in " + path);
    return ds;
}

// ---------------------------------------------------------------------------
// Checkpoints

inline nlohmann::json neuron_json(const NeuronParams& p) {
    return {{"tau_m", p.tau_m},
            {"tau_syn", p.tau_syn},
            {"threshold", p.threshold},
            {"v_leak", p.v_leak},
            {"v_reset", p.v_reset}};
}

inline NeuronParams neuron_from_json(const nlohmann::json& j) {
    NeuronParams p;
    p.tau_m = j.at("tau_m").get<double>();
    p.tau_syn = j.at("tau_syn").get<double>();
    p.threshold = j.at("threshold").get<double>();
    p.v_leak = j.at("v_leak").get<double>();
    p.v_reset = j.at("v_reset").get<double>();
    return p;
}

inline nlohmann::json encoder_json(const EncoderConfig& e) {
    return {{"n_tap", e.n_tap},         {"neurons_per_sample", e.neurons_per_sample},
            {"refs", e.refs},           {"amp", e.amp},
            {"beta", e.beta},           {"kappa", e.kappa},
            {"t_max", e.t_max},         {"dt", e.dt}};
}

inline EncoderConfig encoder_from_json(const nlohmann::json& j) {
    EncoderConfig e;
    e.n_tap = j.at("n_tap").get<int>();
    e.neurons_per_sample = j.at("neurons_per_sample").get<int>();
    e.refs = j.at("refs").get<std::vector<double>>();
    e.amp = j.at("amp").get<double>();
    e.beta = j.at("beta").get<double>();
    e.kappa = j.at("kappa").get<double>();
    e.t_max = j.at("t_max").get<double>();
    e.dt = j.at("dt").get<double>();
    return e;
}

inline void save_snn(const std::string& path, const SnnParams& p, const EncoderConfig& enc) {
    nlohmann::json j = {{"format", "spikeq-checkpoint"},
                        {"version", 1},
                        {"model", "snn"},
                        {"encoder", encoder_json(enc)},
                        {"hidden", neuron_json(p.hidden)},
                        {"readout", neuron_json(p.readout)},
                        {"n_steps", p.n_steps},
                        {"dt", p.dt},
                        {"w_ih", io_detail::matrix_json(p.w_ih)},
                        {"w_ho", io_detail::matrix_json(p.w_ho)}};
    io_detail::atomic_write(path, j.dump(2) + "\n");
}

inline nlohmann::json load_checkpoint_json(const std::string& path) {
    const nlohmann::json j = nlohmann::json::parse(io_detail::read_file(path));
    if (!j.is_object() || j.value("format", "") != "spikeq-checkpoint")
        throw std::runtime_error("not a checkpoint: " + path);
    return j;
}

inline std::string checkpoint_model(const std::string& path) {
    return load_checkpoint_json(path).at("model").get<std::string>();
}

inline std::pair<SnnParams, EncoderConfig> load_snn(const std::string& path) {
    const nlohmann::json j = load_checkpoint_json(path);
    if (j.at("model").get<std::string>() != "snn")
        throw std::runtime_error("checkpoint is not an snn model: " + path);
    SnnParams p;
    p.hidden = neuron_from_json(j.at("hidden"));
    p.readout = neuron_from_json(j.at("readout"));
    p.n_steps = j.at("n_steps").get<int>();
    p.dt = j.at("dt").get<double>();
    p.w_ih = io_detail::matrix_from_json(j.at("w_ih"));
    p.w_ho = io_detail::matrix_from_json(j.at("w_ho"));
    p.validate();
    EncoderConfig enc = encoder_from_json(j.at("encoder"));
    enc.validate();
    return {std::move(p), std::move(enc)};
}

inline void save_ann(const std::string& path, const AnnParams& p) {
    nlohmann::json layers = nlohmann::json::array();
    for (std::size_t l = 0; l < p.n_layers(); ++l)
        layers.push_back({{"w", io_detail::matrix_json(p.w[l])}, {"b", p.b[l]}});
    nlohmann::json j = {{"format", "spikeq-checkpoint"},
                        {"version", 1},
                        {"model", "ann"},
                        {"n_tap", p.n_tap},
                        {"feat_mean", p.feat_mean},
                        {"feat_std", p.feat_std},
                        {"layers", layers}};
    io_detail::atomic_write(path, j.dump(2) + "\n");
}

inline AnnParams load_ann(const std::string& path) {
    const nlohmann::json j = load_checkpoint_json(path);
    if (j.at("model").get<std::string>() != "ann")
        throw std::runtime_error("checkpoint is not an ann model: " + path);
    AnnParams p;
    p.n_tap = j.at("n_tap").get<int>();
    p.feat_mean = j.at("feat_mean").get<std::vector<double>>();
    p.feat_std = j.at("feat_std").get<std::vector<double>>();
    for (const auto& layer : j.at("layers")) {
        p.w.push_back(io_detail::matrix_from_json(layer.at("w")));
        p.b.push_back(layer.at("b").get<std::vector<double>>());
    }
    p.validate();
    return p;
}

inline void save_lmmse(const std::string& path, const LmmseEqualizer& eq) {
    nlohmann::json j = {{"format", "spikeq-checkpoint"},
                        {"version", 1},
                        {"model", "lmmse"},
                        {"n_tap", eq.n_tap},
                        {"taps", eq.taps},
                        {"bias", eq.bias},
                        {"boundaries", eq.boundaries}};
    io_detail::atomic_write(path, j.dump(2) + "\n");
}

inline LmmseEqualizer load_lmmse(const std::string& path) {
    const nlohmann::json j = load_checkpoint_json(path);
    if (j.at("model").get<std::string>() != "lmmse")
        throw std::runtime_error("checkpoint is not an lmmse model: " + path);
    LmmseEqualizer eq;
    eq.n_tap = j.at("n_tap").get<int>();
    eq.taps = j.at("taps").get<std::vector<double>>();
    eq.bias = j.at("bias").get<double>();
    const auto bnd = j.at("boundaries").get<std::vector<double>>();
    if (bnd.size() != 3) throw std::runtime_error("lmmse checkpoint needs 3 boundaries: " + path);
    eq.boundaries = {bnd[0], bnd[1], bnd[2]};
    eq.validate();
    return eq;
}

// One JSON object per line, written atomically as a whole.
inline void save_training_log(const std::string& path, const std::vector<EpochLog>& log) {
    std::string out;
    for (const EpochLog& e : log) {
        nlohmann::json j = {{"epoch", e.epoch},
                            {"train_loss", e.train_loss},
                            {"val_ser", e.val_ser},
                            {"val_ber", e.val_ber}};
        out += j.dump();
        out += '\n';
    }
    io_detail::atomic_write(path, out);
}

}  // namespace spikeq
