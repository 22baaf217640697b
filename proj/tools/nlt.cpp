// nlt: command-line driver for the kernel-learning pipeline.
//
//   nlt generate --config configs/desk.json
//   nlt learn    --config configs/desk.json [--model nonlocal ...] [--tt 30]
//   nlt predict  --config configs/desk.json
//   nlt report   --config configs/desk.json
//   nlt sweep    --config configs/desk.json
//
// Exit codes: 0 success, 2 config error, 3 numerical failure, 4 missing artifact.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "nlt/error.hpp"
#include "nlt/io.hpp"
#include "nlt/pipeline.hpp"

namespace {

struct Overrides {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<double> tt;
    std::vector<std::string> models;
    std::string out;
};

void add_common(CLI::App* cmd, Overrides& o)
{
    cmd->add_option("--config", o.config, "experiment config (JSON)")->required();
    cmd->add_option("--seed", o.seed, "override the global seed");
    cmd->add_option("--tt", o.tt, "override the end of the training window");
    cmd->add_option("--model", o.models, "models to run (repeatable)");
    cmd->add_option("--out", o.out, "override the output directory");
}

nlt::ExperimentConfig resolve(const Overrides& o)
{
    auto cfg = nlt::load_config(o.config);
    if (o.seed) cfg.seed = *o.seed;
    if (o.tt) cfg.tt = *o.tt;
    if (!o.models.empty()) cfg.models = o.models;
    if (!o.out.empty()) cfg.out_dir = o.out;
    cfg.validate();
    return cfg;
}

void print_rows(const std::vector<nlt::MseRow>& rows)
{
    std::printf("%-10s %10s %6s %14s %14s\n", "model", "location", "probe", "train_mse", "test_mse");
    for (const auto& r : rows)
        std::printf("%-10s %10.4g %6s %14.6e %14.6e\n", r.model.c_str(), r.location,
                    r.training_probe ? "yes" : "no", r.train_mse, r.test_mse);
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Learn coarse-grained nonlocal transport models from particle simulations"};
    app.require_subcommand(1);
    Overrides o;
    auto* generate = app.add_subcommand("generate", "flow, tracking and coarse-graining; writes the BTC dataset");
    auto* learn = app.add_subcommand("learn", "fit models on the training window");
    auto* predict = app.add_subcommand("predict", "forward-solve fitted models and compute MSE tables");
    auto* report = app.add_subcommand("report", "collect fits and MSE tables into summary files");
    auto* sweep = app.add_subcommand("sweep", "learn and compare over training windows and probe sets");
    for (auto* cmd : {generate, learn, predict, report, sweep}) add_common(cmd, o);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        const auto cfg = resolve(o);
        if (*generate) {
            const auto data = nlt::cmd_generate(cfg);
            std::printf("frame velocity %.6g (formula %.6g, drift %.6g)\n", data.frame_velocity,
                        data.advection.v_bar, data.drift);
            std::printf("fine-scale MSD log-log slope (second half) %.4f\n", data.msd_loglog_slope);
            std::printf("wrote %zu BTC files to %s/btc\n", cfg.probes.size(), cfg.out_dir.c_str());
        } else if (*learn) {
            nlt::cmd_learn(cfg, cfg.models);
            std::printf("wrote %zu fits to %s/fits\n", cfg.models.size(), cfg.out_dir.c_str());
        } else if (*predict) {
            print_rows(nlt::cmd_predict(cfg, cfg.models));
        } else if (*report) {
            const auto r = nlt::cmd_report(cfg);
            std::cout << r.at("fits").dump(2) << "\n";
        } else if (*sweep) {
            const auto rows = nlt::cmd_sweep(cfg, cfg.models);
            std::printf("%zu rows written to %s/sweep/mse_sweep.csv\n", rows.size(), cfg.out_dir.c_str());
        }
    } catch (const nlt::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const nlt::NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 3;
    } catch (const nlt::MissingArtifact& e) {
        std::cerr << "missing artifact: " << e.what() << "\n";
        return 4;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
