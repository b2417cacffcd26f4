// pitlab: train, compare and export data from the command line.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "pitlab/harness.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

struct RunOptions {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::string strategy;
    std::optional<int> epochs;
    bool quiet = false;
};

int do_run(const RunOptions& opts) {
    pitlab::RunConfig config;
    if (!opts.config.empty()) config = pitlab::load_run_config(opts.config);
    if (opts.seed) config.seed = *opts.seed;
    if (!opts.out.empty()) config.out_dir = opts.out;
    if (!opts.strategy.empty()) {
        pitlab::StrategyConfig s = config.strategy;
        s.kind = pitlab::parse_strategy_kind(opts.strategy);
        config.strategy = s;
    }
    if (opts.epochs) config.epochs = *opts.epochs;
    if (config.out_dir.empty()) config.out_dir = fmt::format("runs/{}_seed{}", pitlab::to_string(config.strategy.kind), config.seed);
    config.validate();

    const auto n_layers = config.model.n_blocks;
    auto log = [&](const pitlab::EpochRecord& r) {
        if (opts.quiet) return;
        std::string sw = "-";
        if (!r.switching.empty() && r.switching.back()) sw = fmt::format("{:.1f}%", *r.switching.back());
        fmt::print("epoch {:3d}  loss {:9.4f}  val SI-SDRi {:7.3f} dB  switch(L{}) {:>6}  drop {:.3f}  lr {:.2e}\n",
                   r.epoch, r.train_loss, r.val_si_sdri, n_layers, sw, r.drop_rate, r.learning_rate);
        std::fflush(stdout);
    };
    const pitlab::RunResult result = pitlab::run(config, log);
    fmt::print("best val SI-SDRi {:.3f} dB at epoch {}; outputs in {}\n", result.best_val_si_sdri(),
               result.best_epoch(), config.out_dir);
    return 0;
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

int do_compare(const std::string& runs, const std::string& out) {
    const nlohmann::json summary = pitlab::compare(split_list(runs));
    const std::string text = summary.dump(2) + "\n";
    if (out.empty()) {
        std::cout << text;
    } else {
        std::ofstream f(out);
        if (!f) throw pitlab::Error("cannot write " + out);
        f << text;
    }
    for (const auto& r : summary["runs"]) {
        std::cerr << fmt::format("{:<30} best {:7.3f} dB  final-third switching {:6.2f}%  decoupling {:8.1f}\n",
                                 r["dir"].get<std::string>(), r["best_val_si_sdri"].get<double>(),
                                 r["final_third_switching"].get<double>(), r["decoupling_total"].get<double>());
    }
    return 0;
}

int do_gen_data(const std::string& config_path, const std::string& out) {
    pitlab::RunConfig config;
    if (!config_path.empty()) config = pitlab::load_run_config(config_path);
    const pitlab::Dataset data = pitlab::generate_split(config.dataset);
    pitlab::export_dataset(data.train, (std::filesystem::path(out) / "train").string());
    pitlab::export_dataset(data.validation, (std::filesystem::path(out) / "validation").string());
    fmt::print("wrote {} training and {} validation mixtures to {}\n", data.train.size(), data.validation.size(), out);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"pitlab: permutation-invariant training lab"};
    app.require_subcommand(1);

    RunOptions run_opts;
    auto* run_cmd = app.add_subcommand("run", "Train one model and write the run directory");
    run_cmd->add_option("--config", run_opts.config, "JSON run configuration")->check(CLI::ExistingFile);
    run_cmd->add_option("--seed", run_opts.seed, "Override the run seed");
    run_cmd->add_option("--out", run_opts.out, "Output directory");
    run_cmd->add_option("--strategy", run_opts.strategy, "Override the strategy name (pit, pit_fix, sinkpit, dsd, lo, dsd_lo)");
    run_cmd->add_option("--epochs", run_opts.epochs, "Override the epoch count");
    run_cmd->add_flag("--quiet", run_opts.quiet, "Suppress per-epoch lines");

    std::string compare_runs, compare_out;
    auto* compare_cmd = app.add_subcommand("compare", "Summarise finished runs side by side");
    compare_cmd->add_option("--runs", compare_runs, "Comma-separated run directories")->required();
    compare_cmd->add_option("--out", compare_out, "Write the JSON summary here instead of stdout");

    std::string gen_config, gen_out;
    auto* gen_cmd = app.add_subcommand("gen-data", "Export the synthetic dataset as float32 files");
    gen_cmd->add_option("--config", gen_config, "JSON run configuration")->check(CLI::ExistingFile);
    gen_cmd->add_option("--out", gen_out, "Output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitConfig;
    }

    try {
        if (*run_cmd) return do_run(run_opts);
        if (*compare_cmd) return do_compare(compare_runs, compare_out);
        if (*gen_cmd) return do_gen_data(gen_config, gen_out);
    } catch (const pitlab::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitRuntime;
    }
    return 0;
}
