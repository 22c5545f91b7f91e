// Command line front end: dataset generation, equalizer training, BER sweeps
// and level histograms. Exit codes: 0 success, 2 bad usage or configuration,
// 3 runtime failure.

#include <cstdio>
#include <exception>
#include <stdexcept>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "spikeq/baselines.hpp"
#include "spikeq/common.hpp"
#include "spikeq/encoder.hpp"
#include "spikeq/harness.hpp"
#include "spikeq/io.hpp"
#include "spikeq/link.hpp"
#include "spikeq/snn.hpp"
#include "spikeq/train.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitRuntime = 3;

void add_link_options(CLI::App* cmd, spikeq::LinkConfig& link) {
    cmd->add_option("--baud", link.baud_rate, "symbol rate [Hz]")->capture_default_str();
    cmd->add_option("--wavelength", link.wavelength, "carrier wavelength [m]")->capture_default_str();
    cmd->add_option("--dispersion", link.dispersion_ps_nm_km, "chromatic dispersion [ps/nm/km]")
        ->capture_default_str();
    cmd->add_option("--length", link.fiber_length, "fiber length [m]")->capture_default_str();
    cmd->add_option("--oversampling", link.oversampling, "samples per symbol")->capture_default_str();
    cmd->add_option("--rolloff", link.rrc_rolloff, "RRC rolloff factor")->capture_default_str();
    cmd->add_option("--rrc-span", link.rrc_span, "RRC half length [symbols]")->capture_default_str();
    cmd->add_option("--amp-scale", link.amp_scale, "amplitude scale before the modulator")
        ->capture_default_str();
    cmd->add_option("--bias", link.bias, "optical bias added before the fiber")->capture_default_str();
    cmd->add_option("--guard", link.guard_symbols, "guard symbols dropped at each end")
        ->capture_default_str();
}

void add_train_options(CLI::App* cmd, spikeq::TrainConfig& cfg) {
    cmd->add_option("--lr", cfg.lr, "Adam learning rate")->capture_default_str();
    cmd->add_option("--beta1", cfg.beta1, "Adam first moment decay")->capture_default_str();
    cmd->add_option("--beta2", cfg.beta2, "Adam second moment decay")->capture_default_str();
    cmd->add_option("--adam-eps", cfg.eps, "Adam epsilon")->capture_default_str();
    cmd->add_option("--batch", cfg.batch_size, "minibatch size")->capture_default_str();
    cmd->add_option("--epochs", cfg.epochs, "training epochs")->capture_default_str();
    cmd->add_option("--surrogate-beta", cfg.surrogate_beta, "surrogate gradient sharpness")
        ->capture_default_str();
    cmd->add_option("--val-fraction", cfg.val_fraction, "fraction held out for validation")
        ->capture_default_str();
    cmd->add_option("--train-seed", cfg.rng_seed, "training seed")->capture_default_str();
    cmd->add_option("--workers", cfg.workers, "worker threads (0 = SPIKEQ_WORKERS or hardware)")
        ->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"PAM4 optical link simulator and neural equalizer bench"};
    app.require_subcommand(1);

    // generate ---------------------------------------------------------------
    auto* gen = app.add_subcommand("generate", "simulate the link and write a symbol dataset");
    spikeq::LinkConfig gen_link;
    std::size_t gen_symbols = 100000;
    std::string gen_out;
    double gen_sigma2 = 0.0;
    std::uint64_t gen_seed = 1;
    gen->add_option("--symbols", gen_symbols, "payload symbols")->capture_default_str();
    gen->add_option("--noise-sigma2", gen_sigma2, "receiver noise variance")->capture_default_str();
    gen->add_option("--seed", gen_seed, "dataset seed")->capture_default_str();
    gen->add_option("--out", gen_out, "output CSV path")->required();
    add_link_options(gen, gen_link);

    // train ------------------------------------------------------------------
    auto* train = app.add_subcommand("train", "train an equalizer on a dataset");
    std::string train_model = "snn";
    std::string train_data, train_out, train_log;
    spikeq::TrainConfig train_cfg;
    int train_tap = 17;
    int train_nps = 10;
    int train_hidden = 40;
    int train_steps = 30;
    double train_dt = 1.0;
    double train_kappa = 0.5;
    double train_margin = 1.0;
    train->add_option("--model", train_model, "snn, ann1 or ann2")
        ->check(CLI::IsMember({"snn", "ann1", "ann2"}))
        ->capture_default_str();
    train->add_option("--data", train_data, "training dataset CSV")->required();
    train->add_option("--out", train_out, "checkpoint path")->required();
    train->add_option("--log", train_log, "JSONL epoch log path");
    train->add_option("--taps", train_tap, "input window [symbols]")->capture_default_str();
    train->add_option("--neurons-per-sample", train_nps, "encoder neurons per window sample")
        ->capture_default_str();
    train->add_option("--hidden", train_hidden, "hidden neurons (snn)")->capture_default_str();
    train->add_option("--steps", train_steps, "simulation steps per window")->capture_default_str();
    train->add_option("--dt", train_dt, "simulation step")->capture_default_str();
    train->add_option("--kappa", train_kappa, "encoder latency compression")->capture_default_str();
    train->add_option("--amp-margin", train_margin, "encoder amplitude scale on the half-range rule")
        ->capture_default_str();
    add_train_options(train, train_cfg);

    // fit-lmmse ----------------------------------------------------------------
    auto* fitlm = app.add_subcommand("fit-lmmse", "fit the linear MMSE equalizer");
    std::string lm_data, lm_out;
    int lm_tap = 17;
    fitlm->add_option("--data", lm_data, "training dataset CSV")->required();
    fitlm->add_option("--out", lm_out, "checkpoint path")->required();
    fitlm->add_option("--taps", lm_tap, "filter taps")->capture_default_str();

    // sweep --------------------------------------------------------------------
    auto* sweep = app.add_subcommand("sweep", "train and score all equalizers over a noise grid");
    spikeq::SweepConfig sw;
    std::string sweep_out;
    sweep->add_option("--out", sweep_out, "output CSV path")->required();
    sweep->add_option("--grid-db", sw.noise_grid_db,
                      "noise grid, dB relative to the noiseless detector variance")
        ->delimiter(',')
        ->capture_default_str();
    sweep->add_option("--equalizers", sw.equalizers, "subset of lmmse,snn,ann1,ann2")
        ->delimiter(',')
        ->capture_default_str();
    sweep->add_option("--train-symbols", sw.n_train, "train symbols per point")->capture_default_str();
    sweep->add_option("--test-symbols", sw.n_test, "test symbols per point")->capture_default_str();
    sweep->add_option("--taps", sw.n_tap, "input window [symbols]")->capture_default_str();
    sweep->add_option("--neurons-per-sample", sw.neurons_per_sample,
                      "encoder neurons per window sample")
        ->capture_default_str();
    sweep->add_option("--hidden", sw.n_hidden, "hidden neurons (snn)")->capture_default_str();
    sweep->add_option("--steps", sw.n_steps, "simulation steps per window")->capture_default_str();
    sweep->add_option("--kappa", sw.kappa, "encoder latency compression")->capture_default_str();
    sweep->add_option("--amp-margin", sw.amp_margin, "encoder amplitude scale on the half-range rule")
        ->capture_default_str();
    sweep->add_option("--master-seed", sw.master_seed, "master seed for the whole sweep")
        ->capture_default_str();
    sweep->add_option("--sweep-workers", sw.workers, "worker threads (0 = SPIKEQ_WORKERS or hardware)")
        ->capture_default_str();
    add_link_options(sweep, sw.link);
    add_train_options(sweep, sw.train);

    // histogram ------------------------------------------------------------------
    auto* hist = app.add_subcommand("histogram", "per-class histogram of received samples");
    std::string hist_data, hist_out;
    int hist_bins = 200;
    hist->add_option("--data", hist_data, "dataset CSV")->required();
    hist->add_option("--out", hist_out, "output CSV path")->required();
    hist->add_option("--bins", hist_bins, "histogram bins")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (app.got_subcommand(gen)) {
            gen_link.noise_sigma2 = gen_sigma2;
            gen_link.rng_seed = gen_seed;
            gen_link.validate();
            const spikeq::Dataset ds = spikeq::make_dataset(gen_symbols, gen_link);
            spikeq::save_dataset(ds, gen_out);
            std::printf("wrote %zu symbols to %s (detector signal variance %.6g)\n", ds.size(),
                        gen_out.c_str(), ds.pd_signal_var);
        } else if (app.got_subcommand(train)) {
            const spikeq::Dataset ds = spikeq::load_dataset(train_data);
            if (train_model == "snn") {
                const double t_max = double(train_steps - 1) * train_dt;
                const spikeq::EncoderConfig enc = spikeq::fit_encoder(
                    ds.y, train_tap, train_nps, t_max, train_dt, train_kappa, train_margin);
                const spikeq::EncodedStream stream = spikeq::encode_stream(ds.y, enc);
                std::mt19937_64 init_rng(spikeq::derive_seed(train_cfg.rng_seed, 0x3001));
                const spikeq::SnnParams init = spikeq::init_snn(
                    static_cast<std::size_t>(train_tap) * static_cast<std::size_t>(train_nps),
                    static_cast<std::size_t>(train_hidden), 4, spikeq::NeuronParams{},
                    spikeq::NeuronParams{}, train_steps, train_dt, init_rng);
                const spikeq::FitResult fit =
                    spikeq::fit_snn(stream, ds.frame.bits, init, train_tap, train_cfg);
                spikeq::save_snn(train_out, fit.params, enc);
                if (!train_log.empty()) spikeq::save_training_log(train_log, fit.log);
                std::printf("snn checkpoint %s (best epoch %d, val BER %.6g)\n", train_out.c_str(),
                            fit.best_epoch, fit.best_val_ber);
            } else {
                const std::vector<int> hidden =
                    train_model == "ann1" ? std::vector<int>{40} : std::vector<int>{34, 10};
                const spikeq::AnnFitResult fit =
                    spikeq::fit_ann(ds.y, ds.frame.bits, hidden, train_tap, train_cfg);
                spikeq::save_ann(train_out, fit.params);
                if (!train_log.empty()) spikeq::save_training_log(train_log, fit.log);
                std::printf("%s checkpoint %s (best epoch %d, val BER %.6g)\n", train_model.c_str(),
                            train_out.c_str(), fit.best_epoch, fit.best_val_ber);
            }
        } else if (app.got_subcommand(fitlm)) {
            const spikeq::Dataset ds = spikeq::load_dataset(lm_data);
            const spikeq::LmmseEqualizer eq = spikeq::fit_lmmse(ds.y, ds.frame.bits, lm_tap);
            spikeq::save_lmmse(lm_out, eq);
            const spikeq::EvalCounts c = spikeq::evaluate_lmmse(eq, ds.y, ds.frame.bits);
            std::printf("lmmse checkpoint %s (train BER %.6g)\n", lm_out.c_str(), c.ber());
        } else if (app.got_subcommand(sweep)) {
            const spikeq::SweepResult res = spikeq::run_sweep(sw);
            spikeq::save_sweep(res, sw, sweep_out);
            std::printf("sweep %s (calibration detector variance %.6g)\n", sweep_out.c_str(),
                        res.calib_pd_var);
            std::printf("%-6s %8s %12s %22s\n", "eq", "dB", "BER", "95%% CI");
            for (const spikeq::BerRecord& r : res.records) {
                if (r.ok)
                    std::printf("%-6s %8.2f %12.3e [%.3e, %.3e]\n", r.equalizer.c_str(), r.noise_db,
                                r.ber, r.ci_lo, r.ci_hi);
                else
                    std::printf("%-6s %8.2f failed: %s\n", r.equalizer.c_str(), r.noise_db,
                                r.error.c_str());
            }
        } else if (app.got_subcommand(hist)) {
            const spikeq::Dataset ds = spikeq::load_dataset(hist_data);
            const spikeq::Histogram h = spikeq::make_histogram(ds.y, ds.frame.bits, hist_bins);
            spikeq::save_histogram(h, hist_out);
            std::printf("histogram %s (%d bins over [%.6g, %.6g])\n", hist_out.c_str(), hist_bins,
                        h.edges.front(), h.edges.back());
        }
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitUsage;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitRuntime;
    }
    return kExitOk;
}
